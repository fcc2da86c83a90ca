//! Rotating synthetic benchmarks.
//!
//! Both generators draw a labeled source at `source_angle`, then one domain
//! per angle of the meta-training range and of the test range (angles are
//! evenly spaced with both endpoints included). Every split of every domain
//! uses its own named random stream (`data/<t>/<split>`), so domains can be
//! generated in any order and a domain at the source angle is an
//! independent draw from the source distribution.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DomainSnapshot, EvolvingDataset, LabeledBatch};
use crate::linalg::Matrix;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Class means on a circle, rotated in the first two coordinates.
    Gaussians,
    /// Binary raster glyphs rotated about the raster centre.
    Glyphs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub classes: usize,
    pub input_dim: usize,
    pub source_samples: usize,
    /// Size of the support and of the query split of each domain.
    pub samples_per_split: usize,
    pub eval_samples: usize,
    /// Gaussian noise σ (per coordinate / per pixel).
    pub noise: f64,
    /// Circle radius for the Gaussian class means.
    pub radius: f64,
    pub source_angle: f64,
    /// Meta-training angles in degrees, `[start, end]`.
    pub angle_range: [f64; 2],
    pub domains: usize,
    /// Online test angles in degrees, `[start, end]`.
    pub test_angle_range: [f64; 2],
    pub test_domains: usize,
    /// Set from the run seed; not part of the serialized config.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Gaussians,
            classes: 5,
            input_dim: 2,
            source_samples: 400,
            samples_per_split: 32,
            eval_samples: 200,
            noise: 0.5,
            radius: 3.0,
            source_angle: 0.0,
            angle_range: [3.0, 60.0],
            domains: 20,
            test_angle_range: [120.0, 174.0],
            test_domains: 10,
            seed: 0,
        }
    }
}

fn linspace(range: [f64; 2], n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![range[0]],
        _ => (0..n)
            .map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("data.classes", "need at least 2 classes"));
        }
        if !(self.angle_range[1] > self.angle_range[0]) {
            return Err(Error::config("data.angle_range", "end must exceed start"));
        }
        if self.domains < 2 {
            return Err(Error::config("data.domains", "need at least 2 domains"));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::config("data.noise", "must be positive"));
        }
        if self.test_domains > 0 {
            if self.test_domains > 1 && !(self.test_angle_range[1] > self.test_angle_range[0]) {
                return Err(Error::config("data.test_angle_range", "end must exceed start"));
            }
            if !(self.test_angle_range[0] > self.angle_range[1]) {
                return Err(Error::config(
                    "data.test_angle_range",
                    "test angles must come after the meta-training range",
                ));
            }
        }
        if self.source_samples < self.classes {
            return Err(Error::config("data.source_samples", "need at least one sample per class"));
        }
        if self.samples_per_split == 0 || self.eval_samples == 0 {
            return Err(Error::config("data.samples_per_split", "splits must be non-empty"));
        }
        match self.kind {
            GeneratorKind::Gaussians => {
                if self.input_dim < 2 {
                    return Err(Error::config("data.input_dim", "gaussians need at least 2 dims"));
                }
                if !(self.radius > 0.0) {
                    return Err(Error::config("data.radius", "must be positive"));
                }
            }
            GeneratorKind::Glyphs => {
                let side = (self.input_dim as f64).sqrt().round() as usize;
                if side * side != self.input_dim || side < 4 {
                    return Err(Error::config(
                        "data.input_dim",
                        format!("glyphs need a square raster of side >= 4, got {}", self.input_dim),
                    ));
                }
                if self.classes > GLYPH_COUNT {
                    return Err(Error::config(
                        "data.classes",
                        format!("at most {GLYPH_COUNT} glyph classes"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Angles of every generated domain, meta-training range first.
    pub fn domain_angles(&self) -> Vec<f64> {
        let mut a = linspace(self.angle_range, self.domains);
        a.extend(linspace(self.test_angle_range, self.test_domains));
        a
    }
}

/// Generates the source and all domains; timestamps are `0..` in angle order.
pub fn generate(cfg: &GeneratorConfig) -> Result<EvolvingDataset> {
    cfg.validate()?;
    let class_templates = match cfg.kind {
        GeneratorKind::Gaussians => None,
        GeneratorKind::Glyphs => {
            let side = (cfg.input_dim as f64).sqrt().round() as usize;
            Some((0..cfg.classes).map(|k| glyph_raster(k, side)).collect::<Vec<_>>())
        }
    };
    let means = |angle: f64| -> Vec<Vec<f64>> {
        match &class_templates {
            None => gaussian_means(cfg, angle),
            Some(glyphs) => {
                let side = (cfg.input_dim as f64).sqrt().round() as usize;
                glyphs.iter().map(|g| rotate_raster(g, side, angle)).collect()
            }
        }
    };
    let source_means = means(cfg.source_angle);
    let source = draw(&source_means, cfg.source_samples, cfg.noise, &mut stream(cfg.seed, "data/source"))?;
    let domains = cfg
        .domain_angles()
        .into_iter()
        .enumerate()
        .map(|(t, angle)| {
            let m = means(angle);
            let name = |split: &str| format!("data/{t}/{split}");
            let support = draw(&m, cfg.samples_per_split, cfg.noise, &mut stream(cfg.seed, &name("support")))?;
            let query = draw(&m, cfg.samples_per_split, cfg.noise, &mut stream(cfg.seed, &name("query")))?;
            let eval = draw(&m, cfg.eval_samples, cfg.noise, &mut stream(cfg.seed, &name("eval")))?;
            Ok(DomainSnapshot {
                timestamp: t as u64,
                angle: Some(angle),
                support: support.features,
                query: query.features,
                eval,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvolvingDataset {
        classes: cfg.classes,
        source,
        domains,
    })
}

/// Class means for the Gaussian benchmark at `angle` degrees.
pub fn gaussian_means(cfg: &GeneratorConfig, angle: f64) -> Vec<Vec<f64>> {
    (0..cfg.classes)
        .map(|k| {
            let phase = 2.0 * std::f64::consts::PI * k as f64 / cfg.classes as f64 + angle.to_radians();
            let mut m = vec![0.0; cfg.input_dim];
            m[0] = cfg.radius * phase.cos();
            m[1] = cfg.radius * phase.sin();
            m
        })
        .collect()
}

/// Balanced labels (round robin, shuffled), each sample `mean + σ·N(0, I)`.
fn draw<R: Rng>(means: &[Vec<f64>], n: usize, noise: f64, rng: &mut R) -> Result<LabeledBatch> {
    let k = means.len();
    let dim = means[0].len();
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    let mut data = Vec::with_capacity(n * dim);
    for &y in &labels {
        for &m in &means[y] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m + noise * z);
        }
    }
    LabeledBatch::new(Matrix::from_vec(n, dim, data)?, labels)
}

pub const GLYPH_COUNT: usize = 8;

/// Binary glyph `k` on a `side × side` raster, row-major.
pub fn glyph_raster(k: usize, side: usize) -> Vec<f64> {
    let mut g = vec![0.0; side * side];
    let mid = side / 2;
    let q = side / 4;
    let mut set = |r: usize, c: usize| g[r * side + c] = 1.0;
    match k {
        // corner: left column and bottom row
        0 => (0..side).for_each(|i| {
            set(i, 0);
            set(side - 1, i);
        }),
        // T: top row and centre column
        1 => (0..side).for_each(|i| {
            set(0, i);
            set(i, mid);
        }),
        // main diagonal
        2 => (0..side).for_each(|i| set(i, i)),
        // filled block in the top-left quadrant
        3 => {
            for r in 0..mid {
                for c in 0..mid {
                    set(r, c);
                }
            }
        }
        // offset vertical bar
        4 => (0..side).for_each(|i| set(i, side - 1 - q)),
        // plus
        5 => (0..side).for_each(|i| {
            set(mid, i);
            set(i, mid);
        }),
        // half-height bar on the right plus a dot
        6 => {
            (0..mid).for_each(|i| set(i, side - 1));
            set(side - 1, 0);
        }
        // hollow box
        7 => (q..side - q).for_each(|i| {
            set(q, i);
            set(side - 1 - q, i);
            set(i, q);
            set(i, side - 1 - q);
        }),
        _ => {}
    }
    g
}

/// Nearest-neighbour rotation by `angle` degrees about the raster centre;
/// pixels sampled from outside the raster are 0.
pub fn rotate_raster(raster: &[f64], side: usize, angle: f64) -> Vec<f64> {
    let (s, c) = angle.to_radians().sin_cos();
    let centre = (side as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for col in 0..side {
            let dx = col as f64 - centre;
            let dy = r as f64 - centre;
            let sx = (c * dx + s * dy + centre).round();
            let sy = (-s * dx + c * dy + centre).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < side && (sy as usize) < side {
                out[r * side + col] = raster[sy as usize * side + sx as usize];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_of_first_mean() {
        let cfg = GeneratorConfig::default();
        let m = gaussian_means(&cfg, 90.0);
        assert!((m[0][0] - 0.0).abs() < 1e-12);
        assert!((m[0][1] - 3.0).abs() < 1e-12);
        let m0 = gaussian_means(&cfg, 0.0);
        assert_eq!(m0[0], vec![3.0, 0.0]);
    }

    #[test]
    fn glyph_rotations() {
        for k in 0..GLYPH_COUNT {
            for side in [5, 8] {
                let g = glyph_raster(k, side);
                assert_eq!(rotate_raster(&g, side, 0.0), g);
                let mut r = g.clone();
                for _ in 0..4 {
                    r = rotate_raster(&r, side, 90.0);
                }
                assert_eq!(r, g, "glyph {k} side {side}");
                let half = rotate_raster(&g, side, 180.0);
                for i in 0..side * side {
                    assert_eq!(half[i], g[side * side - 1 - i]);
                }
            }
        }
    }

    #[test]
    fn glyphs_are_distinct() {
        let gs: Vec<_> = (0..GLYPH_COUNT).map(|k| glyph_raster(k, 8)).collect();
        for i in 0..gs.len() {
            assert!(gs[i].iter().any(|&v| v > 0.0));
            for j in i + 1..gs.len() {
                assert_ne!(gs[i], gs[j]);
            }
        }
    }

    #[test]
    fn validation() {
        let ok = GeneratorConfig::default();
        ok.validate().unwrap();
        let bad = GeneratorConfig {
            angle_range: [60.0, 0.0],
            ..ok.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        let bad = GeneratorConfig {
            kind: GeneratorKind::Glyphs,
            input_dim: 60,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig { noise: 0.0, ..ok.clone() };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig { domains: 1, ..ok };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_angles_mirror_rotation_protocol() {
        let a = GeneratorConfig::default().domain_angles();
        assert_eq!(a.len(), 30);
        assert!((a[0] - 3.0).abs() < 1e-12 && (a[19] - 60.0).abs() < 1e-12);
        assert!((a[20] - 120.0).abs() < 1e-12 && (a[29] - 174.0).abs() < 1e-12);
        assert!((a[21] - 126.0).abs() < 1e-12);
    }
}
