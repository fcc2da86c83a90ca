//! Adaptive prototype mechanism: class prototypes in the classifier's input
//! space, margin-gated pseudo-labels, annealed running updates and the
//! symmetric cross-entropy replay loss over prototypes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{squared_distance, Matrix};
use crate::nn::{softmax_rows, DenseNet};
use crate::{Error, Result};

/// Nearest-prototype class, or `None` when the margin test abstains.
pub type PseudoLabel = Option<usize>;

/// Probability floor inside the reverse cross-entropy logarithm.
pub const RCE_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    prototypes: Matrix,
}

impl PrototypeBank {
    pub fn new(prototypes: Matrix) -> Result<Self> {
        if prototypes.rows() == 0 || prototypes.cols() == 0 {
            return Err(Error::Input("prototype bank needs at least one class and one dim".into()));
        }
        if !prototypes.is_finite() {
            return Err(Error::Numeric("non-finite prototype".into()));
        }
        Ok(Self { prototypes })
    }

    /// Class-conditional means of `features` grouped by `labels`.
    pub fn from_labeled(features: &Matrix, labels: &[usize], classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let mut sums = Matrix::zeros(classes, features.cols());
        let mut counts = vec![0usize; classes];
        for (row, &y) in features.iter_rows().zip(labels) {
            if y >= classes {
                return Err(Error::Input(format!("label {y} out of range for {classes} classes")));
            }
            counts[y] += 1;
            for (s, v) in sums.row_mut(y).iter_mut().zip(row) {
                *s += v;
            }
        }
        for (k, &n) in counts.iter().enumerate() {
            if n == 0 {
                return Err(Error::Input(format!("class {k} has no labeled samples")));
            }
            for s in sums.row_mut(k) {
                *s /= n as f64;
            }
        }
        Self::new(sums)
    }

    pub fn classes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn prototype(&self, k: usize) -> &[f64] {
        self.prototypes.row(k)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.prototypes
    }

    /// Euclidean distance from `feat` to every prototype.
    pub fn distances(&self, feat: &[f64]) -> Result<Vec<f64>> {
        if feat.len() != self.dim() {
            return Err(Error::Shape(format!(
                "feature of dim {} against prototypes of dim {}",
                feat.len(),
                self.dim()
            )));
        }
        Ok(self
            .prototypes
            .iter_rows()
            .map(|c| squared_distance(feat, c).sqrt())
            .collect())
    }

    /// Nearest prototype if it beats the runner-up by more than `delta_d`.
    /// Ties resolve to the lowest class index, which leaves a zero margin.
    pub fn assign(&self, feat: &[f64], delta_d: f64) -> Result<PseudoLabel> {
        if self.classes() < 2 {
            return Err(Error::config(
                "apm.classes",
                "pseudo-labeling needs at least 2 classes",
            ));
        }
        let d = self.distances(feat)?;
        Ok(margin_label(&d, delta_d))
    }

    /// `c_k ← c_k + eta·(feat − c_k)` for an accepted label; no-op otherwise.
    pub fn update(&mut self, feat: &[f64], label: PseudoLabel, eta: f64) -> Result<()> {
        if feat.len() != self.dim() {
            return Err(Error::Shape(format!(
                "feature of dim {} against prototypes of dim {}",
                feat.len(),
                self.dim()
            )));
        }
        if let Some(k) = label {
            if k >= self.classes() {
                return Err(Error::Input(format!("pseudo-label {k} out of range")));
            }
            for (c, &f) in self.prototypes.row_mut(k).iter_mut().zip(feat) {
                *c += eta * (f - *c);
            }
        }
        Ok(())
    }

    /// Labels then updates each row of `features` in order; the bank changes
    /// between rows. Returns how many rows were accepted.
    pub fn progressive_pass(&mut self, features: &Matrix, delta_d: f64, eta: f64) -> Result<usize> {
        let mut accepted = 0;
        for row in features.iter_rows() {
            let label = self.assign(row, delta_d)?;
            if label.is_some() {
                accepted += 1;
                self.update(row, label, eta)?;
            }
        }
        Ok(accepted)
    }

    /// CSV with header `class,c0,c1,...`, one row per class.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["class".to_string()];
        header.extend((0..self.dim()).map(|j| format!("c{j}")));
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for k in 0..self.classes() {
            let mut rec = vec![k.to_string()];
            rec.extend(self.prototype(k).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut rows: Vec<Vec<f64>> = vec![];
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_io(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            let k: usize = rec
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|_| parse_err("bad class index".into()))?;
            if k != rows.len() {
                return Err(parse_err(format!("expected class {}, found {k}", rows.len())));
            }
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| parse_err(format!("bad number `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        Self::new(Matrix::from_rows(&rows)?)
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

fn margin_label(d: &[f64], delta_d: f64) -> PseudoLabel {
    let mut first = 0;
    for (k, &v) in d.iter().enumerate() {
        if v < d[first] {
            first = k;
        }
    }
    let mut second: Option<usize> = None;
    for (k, &v) in d.iter().enumerate() {
        if k != first && second.is_none_or(|s| v < d[s]) {
            second = Some(k);
        }
    }
    let second = second?;
    (d[second] - d[first] > delta_d).then_some(first)
}

/// Piecewise-linear ramp: 0 before `t1`, linear up to `eta_final` at `t2`,
/// flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub t1: f64,
    pub t2: f64,
    pub eta_final: f64,
}

impl AnnealSchedule {
    pub fn new(t1: f64, t2: f64, eta_final: f64) -> Result<Self> {
        let s = Self { t1, t2, eta_final };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 >= 0.0 && self.t1 < self.t2) {
            return Err(Error::config("apm.t1", "need 0 <= t1 < t2"));
        }
        if !(self.eta_final >= 0.0 && self.eta_final.is_finite()) {
            return Err(Error::config("apm.eta_f", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn eta(&self, t: f64) -> f64 {
        if t < self.t1 {
            0.0
        } else if t < self.t2 {
            self.eta_final * (t - self.t1) / (self.t2 - self.t1)
        } else {
            self.eta_final
        }
    }
}

/// Symmetric cross-entropy of prototype logits (row `k` belongs to class `k`):
/// `(1/K) Σ_k [a·CE(p_k, k) + b·RCE(p_k, k)]`, where the reverse term uses
/// `ln(RCE_EPS)` in place of `ln 0`. Returns the loss and its logit gradient.
pub fn sce_from_logits(logits: &Matrix, a: f64, b: f64) -> Result<(f64, Matrix)> {
    let k = logits.rows();
    if k == 0 || logits.cols() != k {
        return Err(Error::Shape(format!(
            "prototype logits must be KxK, got {}x{}",
            logits.rows(),
            logits.cols()
        )));
    }
    let p = softmax_rows(logits);
    let neg_log_eps = -RCE_EPS.ln();
    let kf = k as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(k, k);
    for c in 0..k {
        let row = logits.row(c);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let ce = lse - row[c];
        let pr = p.row(c);
        let off_mass: f64 = pr.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, v)| v).sum();
        loss += a * ce + b * neg_log_eps * off_mass;
        let pc = pr[c];
        for (j, g) in grad.row_mut(c).iter_mut().enumerate() {
            let onehot = if j == c { 1.0 } else { 0.0 };
            // d(off_mass)/dz_j = −p_c(δ_cj − p_j)
            let d_off = -pc * (onehot - pr[j]);
            *g = (a * (pr[j] - onehot) + b * neg_log_eps * d_off) / kf;
        }
    }
    Ok((loss / kf, grad))
}

/// Replay loss of the classifier on the prototypes. Adds `scale ×` its
/// gradient into the classifier's buffers (prototypes are constants) and
/// returns the unscaled loss.
pub fn sce_loss(bank: &PrototypeBank, classifier: &mut DenseNet, a: f64, b: f64, scale: f64) -> Result<f64> {
    if classifier.in_dim() != bank.dim() {
        return Err(Error::Shape(format!(
            "classifier takes {} inputs, prototypes have dim {}",
            classifier.in_dim(),
            bank.dim()
        )));
    }
    let tr = classifier.forward(bank.as_matrix())?;
    let (loss, grad) = sce_from_logits(tr.output(), a, b)?;
    if scale != 0.0 {
        classifier.backward(&tr, &grad.scale(scale))?;
    }
    Ok(loss)
}
