//! Gaussian-kernel maximum mean discrepancy over one or more representation
//! levels, and the evolution-rate estimate built from it.
//!
//! The joint kernel between two samples is the product of per-level Gaussian
//! kernels `exp(−‖x_l − y_l‖² / (2σ_l²))`. The estimator is the biased
//! V-statistic (diagonal included), which is nonnegative up to rounding.
//! Bandwidths are treated as constants when differentiating.

use serde::{Deserialize, Serialize};

use crate::linalg::{squared_distance, Matrix};
use crate::{Error, Result};

/// Which representation a kernel level reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    /// Masked feature activations (classifier input).
    Features,
    /// Softmax class probabilities.
    Predictions,
}

/// Kernel width for every level: the median heuristic recomputed on each
/// call, or a fixed σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandwidthRepr", into = "BandwidthRepr")]
pub enum Bandwidth {
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<BandwidthRepr> for Bandwidth {
    type Error = String;

    fn try_from(r: BandwidthRepr) -> std::result::Result<Self, String> {
        match r {
            BandwidthRepr::Name(s) if s == "median-heuristic" => Ok(Bandwidth::MedianHeuristic),
            BandwidthRepr::Name(s) => Err(format!("unknown bandwidth `{s}`")),
            BandwidthRepr::Value(v) if v > 0.0 && v.is_finite() => Ok(Bandwidth::Fixed(v)),
            BandwidthRepr::Value(v) => Err(format!("bandwidth must be positive, got {v}")),
        }
    }
}

impl From<Bandwidth> for BandwidthRepr {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::MedianHeuristic => BandwidthRepr::Name("median-heuristic".into()),
            Bandwidth::Fixed(v) => BandwidthRepr::Value(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub levels: Vec<Level>,
    pub bandwidth: Bandwidth,
    /// Per-level σ that overrides `bandwidth`; used to hold widths fixed
    /// while probing gradients numerically.
    #[serde(skip)]
    pub pinned: Option<Vec<f64>>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            levels: vec![Level::Features, Level::Predictions],
            bandwidth: Bandwidth::MedianHeuristic,
            pinned: None,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("divergence.levels", "at least one level is required"));
        }
        if let Bandwidth::Fixed(v) = self.bandwidth {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config("divergence.bandwidth", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn pinned_to(&self, sigmas: Vec<f64>) -> Self {
        Self {
            pinned: Some(sigmas),
            ..self.clone()
        }
    }

    /// Squared bandwidth per level for the pair of batches.
    pub fn resolve(&self, a: &[&Matrix], b: &[&Matrix]) -> Result<Vec<f64>> {
        if let Some(p) = &self.pinned {
            if p.len() != a.len() {
                return Err(Error::Shape(format!(
                    "{} pinned bandwidths for {} levels",
                    p.len(),
                    a.len()
                )));
            }
            return Ok(p.iter().map(|s| s * s).collect());
        }
        a.iter()
            .zip(b)
            .map(|(x, y)| match self.bandwidth {
                Bandwidth::Fixed(s) => Ok(s * s),
                Bandwidth::MedianHeuristic => median_heuristic(&x.vstack(y)?),
            })
            .collect()
    }
}

/// Squared bandwidth σ² = median of pairwise squared Euclidean distances
/// (distinct pairs; mean of the two middle values for an even count).
/// A zero median falls back to 1.
pub fn median_heuristic(samples: &Matrix) -> Result<f64> {
    let n = samples.rows();
    if n < 2 {
        return Err(Error::Input(format!(
            "median heuristic needs at least 2 samples, got {n}"
        )));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(squared_distance(samples.row(i), samples.row(j)));
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    Ok(if med > 0.0 { med } else { 1.0 })
}

#[derive(Debug, Clone)]
pub struct DivergenceValue {
    pub value: f64,
    /// d value / d repsA, one matrix per level.
    pub grad_a: Vec<Matrix>,
    pub grad_b: Vec<Matrix>,
    /// Squared bandwidths that were used.
    pub bandwidths_sq: Vec<f64>,
}

fn check_levels(a: &[&Matrix], b: &[&Matrix]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Shape(format!(
            "level count mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a[0].rows(), b[0].rows());
    if na == 0 || nb == 0 {
        return Err(Error::Input("MMD of an empty batch".into()));
    }
    for (l, (x, y)) in a.iter().zip(b).enumerate() {
        if x.cols() != y.cols() {
            return Err(Error::Shape(format!(
                "level {l}: {} vs {} columns",
                x.cols(),
                y.cols()
            )));
        }
        if x.rows() != na || y.rows() != nb {
            return Err(Error::Shape(format!("level {l}: row counts differ across levels")));
        }
    }
    Ok(())
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    // summation order depends only on the multiset of terms, which makes the
    // estimator exactly symmetric in its two arguments
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Biased joint MMD² between batches `a` and `b`, with gradients.
pub fn joint_mmd(a: &[&Matrix], b: &[&Matrix], cfg: &KernelConfig) -> Result<DivergenceValue> {
    check_levels(a, b)?;
    let bw = cfg.resolve(a, b)?;
    let (na, nb) = (a[0].rows(), b[0].rows());
    let n = na + nb;
    // pooled view: index u < na is in A, otherwise B
    let row = |level: usize, u: usize| -> &[f64] {
        if u < na {
            a[level].row(u)
        } else {
            b[level].row(u - na)
        }
    };
    let levels = a.len();
    let mut kmat = vec![0.0; n * n];
    for u in 0..n {
        kmat[u * n + u] = 1.0;
        for v in u + 1..n {
            let mut e = 0.0;
            for l in 0..levels {
                e += squared_distance(row(l, u), row(l, v)) / (2.0 * bw[l]);
            }
            let k = (-e).exp();
            kmat[u * n + v] = k;
            kmat[v * n + u] = k;
        }
    }
    let mut aa = Vec::with_capacity(na * na);
    let mut bb = Vec::with_capacity(nb * nb);
    let mut ab = Vec::with_capacity(na * nb);
    for u in 0..n {
        for v in 0..n {
            let k = kmat[u * n + v];
            match (u < na, v < na) {
                (true, true) => aa.push(k),
                (false, false) => bb.push(k),
                (true, false) => ab.push(k),
                (false, true) => {}
            }
        }
    }
    let (fa, fb) = (na as f64, nb as f64);
    let value =
        sorted_sum(aa) / (fa * fa) + sorted_sum(bb) / (fb * fb) - 2.0 * sorted_sum(ab) / (fa * fb);

    let coef = |u: usize| if u < na { 1.0 / fa } else { -1.0 / fb };
    let mut grad_a: Vec<Matrix> = a.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut grad_b: Vec<Matrix> = b.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    for u in 0..n {
        let cu = coef(u);
        for l in 0..levels {
            let xu = row(l, u);
            let mut g = vec![0.0; xu.len()];
            for v in 0..n {
                if v == u {
                    continue;
                }
                let w = -2.0 * cu * coef(v) * kmat[u * n + v] / bw[l];
                for ((gi, &xi), &yi) in g.iter_mut().zip(xu).zip(row(l, v)) {
                    *gi += w * (xi - yi);
                }
            }
            let dst = if u < na {
                grad_a[l].row_mut(u)
            } else {
                grad_b[l].row_mut(u - na)
            };
            dst.copy_from_slice(&g);
        }
    }
    Ok(DivergenceValue {
        value,
        grad_a,
        grad_b,
        bandwidths_sq: bw,
    })
}

#[derive(Debug, Clone)]
pub struct AlphaHat {
    pub value: f64,
    /// Index `i` of the maximizing consecutive pair `(i − 1, i)`.
    pub argmax: usize,
    pub divergence: DivergenceValue,
    /// Divergence of every consecutive pair, in order.
    pub pair_values: Vec<f64>,
}

/// Evolution-rate estimate: max over consecutive domains of the joint MMD.
/// Ties go to the earlier pair.
pub fn alpha_hat(trajectory: &[Vec<&Matrix>], cfg: &KernelConfig) -> Result<AlphaHat> {
    if trajectory.len() < 2 {
        return Err(Error::Input(format!(
            "evolution rate needs at least 2 domains, got {}",
            trajectory.len()
        )));
    }
    let mut best: Option<(usize, DivergenceValue)> = None;
    let mut pair_values = Vec::with_capacity(trajectory.len() - 1);
    for i in 1..trajectory.len() {
        let d = joint_mmd(&trajectory[i - 1], &trajectory[i], cfg)?;
        pair_values.push(d.value);
        if best.as_ref().is_none_or(|(_, b)| d.value > b.value) {
            best = Some((i, d));
        }
    }
    let (argmax, divergence) = best.expect("at least one pair");
    Ok(AlphaHat {
        value: divergence.value,
        argmax,
        divergence,
        pair_values,
    })
}
