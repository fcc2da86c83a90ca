//! Dataset directory layout:
//!
//! ```text
//! source.csv              label,x0,x1,...
//! domain_<t>_support.csv  x0,x1,...
//! domain_<t>_query.csv    x0,x1,...
//! domain_<t>_eval.csv     label,x0,x1,...
//! ```
//!
//! UTF-8 with one header row. `<t>` is a non-negative integer timestamp and
//! defines domain order. Values are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DomainSnapshot, EvolvingDataset, LabeledBatch};
use crate::linalg::Matrix;
use crate::{Error, Result};

const SPLITS: [&str; 3] = ["support", "query", "eval"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        },
    }
}

fn write_matrix(path: &Path, m: &Matrix, labels: Option<&[usize]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = Vec::with_capacity(m.cols() + 1);
    if labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..m.cols()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (r, row) in m.iter_rows().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(row.len() + 1);
        if let Some(l) = labels {
            rec.push(l[r].to_string());
        }
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `ds` under `dir` (created if missing). Refuses to replace an
/// existing dataset unless `overwrite`, in which case stale domain files are
/// removed first.
pub fn write_dataset(dir: &Path, ds: &EvolvingDataset, overwrite: bool) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let existing = dataset_files(dir)?;
    if !existing.is_empty() {
        if !overwrite {
            return Err(Error::Input(format!(
                "{} already holds a dataset (pass --force to replace it)",
                dir.display()
            )));
        }
        for p in existing {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    write_matrix(&dir.join("source.csv"), &ds.source.features, Some(&ds.source.labels))?;
    for d in &ds.domains {
        let t = d.timestamp;
        write_matrix(&dir.join(format!("domain_{t}_support.csv")), &d.support, None)?;
        write_matrix(&dir.join(format!("domain_{t}_query.csv")), &d.query, None)?;
        write_matrix(
            &dir.join(format!("domain_{t}_eval.csv")),
            &d.eval.features,
            Some(&d.eval.labels),
        )?;
    }
    Ok(())
}

fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![];
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "source.csv" || parse_domain_name(&name).is_some() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// `domain_<t>_<split>.csv` → `(t as written, split)`.
fn parse_domain_name(name: &str) -> Option<(String, &'static str)> {
    let rest = name.strip_prefix("domain_")?.strip_suffix(".csv")?;
    let (t, split) = rest.rsplit_once('_')?;
    let split = SPLITS.into_iter().find(|s| *s == split)?;
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((t.to_string(), split))
}

struct Table {
    matrix: Matrix,
    labels: Option<Vec<usize>>,
}

fn read_table(path: &Path, labeled: bool) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let offset = usize::from(labeled);
    if labeled && header.get(0) != Some("label") {
        return Err(parse_err(1, "first column must be `label`".into()));
    }
    let dim = header.len().saturating_sub(offset);
    for (j, h) in header.iter().skip(offset).enumerate() {
        if h != format!("x{j}") {
            return Err(parse_err(1, format!("expected column `x{j}`, found `{h}`")));
        }
    }
    if dim == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }
    let mut data = vec![];
    let mut labels = vec![];
    let mut rows = 0;
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_err(path, e)),
        }
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + offset {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", dim + offset, rec.len()),
            ));
        }
        if labeled {
            let l = rec[0]
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad label `{}`", &rec[0])))?;
            labels.push(l);
        }
        for field in rec.iter().skip(offset) {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok(Table {
        matrix: Matrix::from_vec(rows, dim, data)?,
        labels: labeled.then_some(labels),
    })
}

/// Reads a dataset directory in the layout above.
pub fn load_external(dir: &Path) -> Result<EvolvingDataset> {
    let source_path = dir.join("source.csv");
    let src = read_table(&source_path, true)?;
    let dim = src.matrix.cols();
    let source = LabeledBatch::new(src.matrix, src.labels.expect("labeled"))?;

    let mut by_t: BTreeMap<u64, (String, BTreeMap<&'static str, PathBuf>)> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some((t_str, split)) = parse_domain_name(&name) else {
            continue;
        };
        let t: u64 = t_str.parse().map_err(|_| Error::Parse {
            path: entry.path(),
            line: 0,
            msg: format!("timestamp `{t_str}` out of range"),
        })?;
        let slot = by_t.entry(t).or_insert_with(|| (t_str.clone(), BTreeMap::new()));
        if slot.0 != t_str {
            return Err(Error::Parse {
                path: entry.path(),
                line: 0,
                msg: format!(
                    "timestamp {t} spelled both `{}` and `{t_str}`; domain order is ambiguous",
                    slot.0
                ),
            });
        }
        slot.1.insert(split, entry.path());
    }

    let mut classes = source.labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut domains = Vec::with_capacity(by_t.len());
    for (t, (_, files)) in by_t {
        let get = |split: &str| {
            files.get(split).cloned().ok_or_else(|| Error::Parse {
                path: dir.join(format!("domain_{t}_{split}.csv")),
                line: 0,
                msg: format!("domain {t} is missing its {split} file"),
            })
        };
        let (sp, qp, ep) = (get("support")?, get("query")?, get("eval")?);
        let support = read_table(&sp, false)?.matrix;
        let query = read_table(&qp, false)?.matrix;
        let ev = read_table(&ep, true)?;
        for (p, m) in [(&sp, &support), (&qp, &query), (&ep, &ev.matrix)] {
            if m.cols() != dim {
                return Err(Error::Parse {
                    path: p.clone(),
                    line: 1,
                    msg: format!("header declares {} features, source has {dim}", m.cols()),
                });
            }
        }
        let eval_labels = ev.labels.expect("labeled");
        if let Some(&m) = eval_labels.iter().max() {
            classes = classes.max(m + 1);
        }
        domains.push(DomainSnapshot {
            timestamp: t,
            angle: None,
            support,
            query,
            eval: LabeledBatch::new(ev.matrix, eval_labels)?,
        });
    }
    let ds = EvolvingDataset {
        classes,
        source,
        domains,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_file_names() {
        assert_eq!(parse_domain_name("domain_12_eval.csv"), Some(("12".into(), "eval")));
        assert_eq!(parse_domain_name("domain_3_query.csv"), Some(("3".into(), "query")));
        assert_eq!(parse_domain_name("domain_x_eval.csv"), None);
        assert_eq!(parse_domain_name("domain_1_train.csv"), None);
        assert_eq!(parse_domain_name("source.csv"), None);
    }
}
