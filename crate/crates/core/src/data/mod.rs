//! Evolving-domain datasets: synthetic generators, trajectory sampling and
//! the on-disk CSV layout.

mod generate;
mod io;

pub use generate::{gaussian_means, generate, glyph_raster, rotate_raster, GeneratorConfig, GeneratorKind};
pub use io::{load_external, write_dataset};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledBatch {
        LabeledBatch {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// One target domain. Labels of `eval` are for measurement only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSnapshot {
    pub timestamp: u64,
    /// Rotation angle in degrees, when known.
    pub angle: Option<f64>,
    pub support: Matrix,
    pub query: Matrix,
    pub eval: LabeledBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolvingDataset {
    pub classes: usize,
    pub source: LabeledBatch,
    /// Strictly increasing timestamps.
    pub domains: Vec<DomainSnapshot>,
}

impl EvolvingDataset {
    pub fn input_dim(&self) -> usize {
        self.source.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.is_empty() {
            return Err(Error::Input("source domain is empty".into()));
        }
        let d = self.input_dim();
        for w in self.domains.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(Error::Input(format!(
                    "domain timestamps out of order: {} then {}",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        for dom in &self.domains {
            for (what, m) in [("support", &dom.support), ("query", &dom.query), ("eval", &dom.eval.features)] {
                if m.cols() != d {
                    return Err(Error::Shape(format!(
                        "domain {} {what} has {} columns, source has {d}",
                        dom.timestamp,
                        m.cols()
                    )));
                }
            }
        }
        let max_label = self
            .domains
            .iter()
            .flat_map(|d| d.eval.labels.iter())
            .chain(&self.source.labels)
            .copied()
            .max()
            .unwrap_or(0);
        if max_label >= self.classes {
            return Err(Error::Input(format!(
                "label {max_label} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    /// Splits the domains into a meta-training prefix and the last
    /// `test_domains` for online testing.
    pub fn split(&self, test_domains: usize) -> Result<(&[DomainSnapshot], &[DomainSnapshot])> {
        if test_domains > self.domains.len() {
            return Err(Error::Input(format!(
                "{test_domains} test domains requested, dataset has {}",
                self.domains.len()
            )));
        }
        Ok(self.domains.split_at(self.domains.len() - test_domains))
    }
}

/// Uniform sample of `count` domain indices without replacement, returned in
/// time order.
pub fn sample_trajectory<R: Rng + ?Sized>(available: usize, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count > available {
        return Err(Error::Input(format!(
            "trajectory of {count} domains requested from {available}"
        )));
    }
    let mut idx = index::sample(rng, available, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// `count` distinct row indices drawn uniformly from `0..rows`; all rows
/// (shuffled) when `count >= rows`.
pub fn sample_rows<R: Rng + ?Sized>(rows: usize, count: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, rows, count.min(rows)).into_vec()
}
