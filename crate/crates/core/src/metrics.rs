//! Continual-learning metrics over the accuracy matrix `R`, where `R[i][j]`
//! is the accuracy on domain `j`'s eval set after adapting through domain
//! `i` (`j <= i`), plus run reports and their multi-seed aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Option<f64>>>", into = "Vec<Vec<Option<f64>>>")]
pub struct RMatrix {
    t: usize,
    entries: Vec<Option<f64>>,
}

impl RMatrix {
    pub fn new(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::Input("accuracy matrix needs at least one domain".into()));
        }
        Ok(Self {
            t,
            entries: vec![None; t * t],
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut r = Self::new(rows.len())?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Shape(format!(
                    "row {i} of a lower-triangular matrix needs {} entries, got {}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                r.set(i, j, v)?;
            }
        }
        Ok(r)
    }

    pub fn domains(&self) -> usize {
        self.t
    }

    pub fn set(&mut self, i: usize, j: usize, acc: f64) -> Result<()> {
        if i >= self.t || j > i {
            return Err(Error::Input(format!("R[{i}][{j}] is outside the lower triangle")));
        }
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::Input(format!("accuracy {acc} outside [0, 1]")));
        }
        self.entries[i * self.t + j] = Some(acc);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i < self.t && j <= i {
            self.entries[i * self.t + j]
        } else {
            None
        }
    }

    /// Row `i` (entries `0..=i`), if complete.
    pub fn row(&self, i: usize) -> Option<Vec<f64>> {
        (0..=i).map(|j| self.get(i, j)).collect()
    }

    pub fn final_row(&self) -> Option<Vec<f64>> {
        self.row(self.t - 1)
    }

    pub fn diagonal(&self) -> Option<Vec<f64>> {
        (0..self.t).map(|i| self.get(i, i)).collect()
    }

    /// Mean of the final row.
    pub fn acc(&self) -> Result<f64> {
        let last = self
            .final_row()
            .ok_or_else(|| Error::State("final row of R is incomplete".into()))?;
        Ok(last.iter().sum::<f64>() / self.t as f64)
    }

    /// Mean over `i < T` of `R[T][i] − R[i][i]`.
    pub fn bwt(&self) -> Result<f64> {
        if self.t < 2 {
            return Err(Error::Input("backward transfer needs at least 2 domains".into()));
        }
        let last = self
            .final_row()
            .ok_or_else(|| Error::State("final row of R is incomplete".into()))?;
        let diag = self
            .diagonal()
            .ok_or_else(|| Error::State("diagonal of R is incomplete".into()))?;
        let s: f64 = (0..self.t - 1).map(|i| last[i] - diag[i]).sum();
        Ok(s / (self.t - 1) as f64)
    }
}

impl TryFrom<Vec<Vec<Option<f64>>>> for RMatrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<Option<f64>>>) -> std::result::Result<Self, String> {
        let mut r = RMatrix::new(rows.len()).map_err(|e| e.to_string())?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(format!("row {i} must have {} entries", i + 1));
            }
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    r.set(i, j, *v).map_err(|e| e.to_string())?;
                }
            }
        }
        Ok(r)
    }
}

impl From<RMatrix> for Vec<Vec<Option<f64>>> {
    fn from(r: RMatrix) -> Self {
        (0..r.t).map(|i| (0..=i).map(|j| r.get(i, j)).collect()).collect()
    }
}

/// Output of one run of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    /// Timestamps of the online domains, in column order of `r_matrix`.
    pub domains: Vec<u64>,
    pub r_matrix: RMatrix,
    pub acc: f64,
    pub bwt: Option<f64>,
    pub counters: BTreeMap<String, u64>,
    /// Parameter checksums at phase boundaries.
    pub checksums: BTreeMap<String, String>,
    /// Kept out of `report.json` so identical runs serialize identically.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn new(
        method: impl Into<String>,
        seed: u64,
        config: serde_json::Value,
        domains: Vec<u64>,
        r_matrix: RMatrix,
    ) -> Result<Self> {
        if domains.len() != r_matrix.domains() {
            return Err(Error::Shape("one timestamp per R column".into()));
        }
        let acc = r_matrix.acc()?;
        let bwt = if r_matrix.domains() >= 2 {
            Some(r_matrix.bwt()?)
        } else {
            None
        };
        Ok(Self {
            method: method.into(),
            seed,
            config,
            domains,
            r_matrix,
            acc,
            bwt,
            counters: BTreeMap::new(),
            checksums: BTreeMap::new(),
            wall_clock_secs: 0.0,
        })
    }

    /// Recomputes ACC/BWT from the embedded matrix and compares exactly.
    pub fn is_consistent(&self) -> bool {
        let bwt_ok = match (self.bwt, self.r_matrix.bwt().ok()) {
            (Some(a), Some(b)) => a == b,
            (None, None) => true,
            _ => false,
        };
        self.r_matrix.acc().ok() == Some(self.acc) && bwt_ok
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 when `n == 1`.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("summary of no values".into()));
        }
        // sorting first makes the result independent of input order
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            dev.sort_by(f64::total_cmp);
            (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, std, n })
    }

    pub fn single_run(&self) -> bool {
        self.n == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub seeds: Vec<u64>,
    /// `acc`, `bwt`, and `domain_<t>` (final-row accuracy per domain).
    pub metrics: BTreeMap<String, Summary>,
}

fn config_without_seed(v: &serde_json::Value) -> serde_json::Value {
    let mut v = v.clone();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("seed");
    }
    v
}

/// Mean ± sample std per metric over reports of one method that differ only
/// in their seed.
pub fn aggregate(reports: &[RunReport]) -> Result<Aggregate> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Input("nothing to aggregate".into()))?;
    let base = config_without_seed(&first.config);
    for r in reports {
        if r.method != first.method {
            return Err(Error::Input(format!(
                "cannot aggregate methods `{}` and `{}`",
                first.method, r.method
            )));
        }
        if config_without_seed(&r.config) != base || r.domains != first.domains {
            return Err(Error::Input(format!(
                "report for seed {} was produced with a different configuration",
                r.seed
            )));
        }
    }
    let mut metrics = BTreeMap::new();
    let accs: Vec<f64> = reports.iter().map(|r| r.acc).collect();
    metrics.insert("acc".to_string(), Summary::of(&accs)?);
    let bwts: Vec<f64> = reports.iter().filter_map(|r| r.bwt).collect();
    if bwts.len() == reports.len() {
        metrics.insert("bwt".to_string(), Summary::of(&bwts)?);
    }
    for (j, t) in first.domains.iter().enumerate() {
        let vals = reports
            .iter()
            .map(|r| {
                r.r_matrix
                    .final_row()
                    .map(|row| row[j])
                    .ok_or_else(|| Error::State("incomplete final row".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        metrics.insert(format!("domain_{t}"), Summary::of(&vals)?);
    }
    let mut seeds: Vec<u64> = reports.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    Ok(Aggregate {
        method: first.method.clone(),
        seeds,
        metrics,
    })
}

fn csv_write_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Per-domain table: one row per report, one column per domain (final-row
/// accuracy), and a trailing `Average` (= ACC).
pub fn write_per_domain_csv(path: &Path, reports: &[&RunReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Input("no reports to tabulate".into()));
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_err(path, e))?;
    let mut header = vec!["method".to_string()];
    header.extend(first.domains.iter().map(|t| format!("domain_{t}")));
    header.push("Average".into());
    w.write_record(&header).map_err(|e| csv_write_err(path, e))?;
    for r in reports {
        if r.domains != first.domains {
            return Err(Error::Input("reports cover different domains".into()));
        }
        let row = r
            .r_matrix
            .final_row()
            .ok_or_else(|| Error::State("incomplete final row".into()))?;
        let mut rec = vec![r.method.clone()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        rec.push(format!("{}", r.acc));
        w.write_record(&rec).map_err(|e| csv_write_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `method,metric,mean,std,n` for every aggregate.
pub fn write_aggregate_csv(path: &Path, aggs: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_err(path, e))?;
    w.write_record(["method", "metric", "mean", "std", "n"])
        .map_err(|e| csv_write_err(path, e))?;
    for a in aggs {
        for (name, s) in &a.metrics {
            w.write_record([
                a.method.clone(),
                name.clone(),
                format!("{}", s.mean),
                format!("{}", s.std),
                s.n.to_string(),
            ])
            .map_err(|e| csv_write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
