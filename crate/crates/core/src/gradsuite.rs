//! Finite-difference checks of every training loss on small networks.

use rand::Rng;
use serde::Serialize;

use crate::apm::{sce_loss, PrototypeBank};
use crate::config::{Method, RunConfig};
use crate::data::LabeledBatch;
use crate::divergence::{KernelConfig, Level};
use crate::engine::{Group, PCAdaModel};
use crate::linalg::Matrix;
use crate::nn::{grad_check, softmax_cross_entropy, Activation, DenseNet, Parameters};
use crate::rng::stream;
use crate::{Error, Result};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Losses covered by the suite, in run order.
pub const CASES: [&str; 5] = ["cross-entropy", "replay-sce", "inner-loss", "joint-mmd", "outer-loss"];

const INPUT: usize = 3;
const FEATURES: usize = 5;
const CLASSES: usize = 3;
const BATCH: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    pub params: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub step: f64,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let v = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, v).expect("shape matches")
}

fn labels(n: usize) -> Vec<usize> {
    (0..n).map(|i| i % CLASSES).collect()
}

/// Small model with a smooth φ and an unsaturated mask.
fn tiny_model(seed: u64, method: Method) -> Result<PCAdaModel> {
    let mut cfg = RunConfig::default().with_seed(seed);
    cfg.method = method;
    cfg.model.feature_dim = FEATURES;
    cfg.model.phi_hidden = vec![4];
    cfg.model.classifier_hidden = vec![4];
    cfg.sam.encoder_dim = 4;
    cfg.sam.decoder_weight_scale = 0.01;
    cfg.sam.decoder_bias = 0.0;
    let mut m = PCAdaModel::new(&cfg, method, INPUT, CLASSES)?;
    m.phi = DenseNet::mlp(
        &[INPUT, 4, FEATURES],
        Activation::Sigmoid,
        Activation::Identity,
        &mut stream(seed, "gradsuite/phi"),
    )?;
    m.classifier = DenseNet::mlp(
        &[FEATURES, 4, CLASSES],
        Activation::Sigmoid,
        Activation::Identity,
        &mut stream(seed, "gradsuite/classifier"),
    )?;
    m.sam.set_encoder_frozen(false);
    let mut rng = stream(seed, "gradsuite/prototypes");
    m.bank = Some(PrototypeBank::new(uniform(CLASSES, FEATURES, &mut rng))?);
    Ok(m)
}

/// Fixed bandwidths so the numeric probe differentiates the same function.
fn pinned_kernel(m: &PCAdaModel) -> KernelConfig {
    let sigmas = m
        .hyper
        .kernel
        .levels
        .iter()
        .map(|l| match l {
            Level::Features => 1.2,
            Level::Predictions => 0.4,
        })
        .collect();
    m.hyper.kernel.pinned_to(sigmas)
}

/// Adds a term to the loss value that the analytic gradient ignores.
fn corrupt(loss: f64, params: &[f64], on: bool) -> f64 {
    if on {
        loss + 0.5 * params[0] * params[0] + params[0]
    } else {
        loss
    }
}

fn check_case(name: &str, seed: u64, fault: bool) -> Result<CaseResult> {
    let mut rng = stream(seed, &format!("gradsuite/{name}"));
    let report = match name {
        "cross-entropy" => {
            let mut net = DenseNet::mlp(&[INPUT, 6, 4, CLASSES], Activation::Sigmoid, Activation::Identity, &mut rng)?;
            let x = uniform(BATCH, INPUT, &mut rng);
            let y = labels(BATCH);
            grad_check(&mut net, STEP, |n| {
                let tr = n.forward(&x)?;
                let ce = softmax_cross_entropy(tr.output(), &y)?;
                n.backward(&tr, &ce.grad)?;
                Ok(corrupt(ce.loss, &n.params_vec(), fault))
            })?
        }
        "replay-sce" => {
            let mut m = tiny_model(seed, Method::PcadaFull)?;
            let bank = m.bank.clone().expect("tiny model has prototypes");
            let (a, b) = (m.hyper.sce_a, m.hyper.sce_b);
            grad_check(&mut m.classifier, STEP, |n| {
                let l = sce_loss(&bank, n, a, b, 1.0)?;
                Ok(corrupt(l, &n.params_vec(), fault))
            })?
        }
        "inner-loss" => {
            let mut m = tiny_model(seed, Method::PcadaFull)?;
            let src = LabeledBatch::new(uniform(BATCH, INPUT, &mut rng), labels(BATCH))?;
            let tgt = uniform(BATCH, INPUT, &mut rng);
            let kernel = pinned_kernel(&m);
            grad_check(&mut m.view(Group::Classifier), STEP, |v| {
                let l = v.model.inner_loss(Some(&src), &tgt, 0.5, &kernel)?;
                Ok(corrupt(l, &v.params_vec(), fault))
            })?
        }
        "joint-mmd" => {
            // divergence alone, through features and predictions into φ
            let mut m = tiny_model(seed, Method::PcadaNoSam)?;
            let traj = vec![uniform(BATCH, INPUT, &mut rng), uniform(BATCH, INPUT, &mut rng)];
            let kernel = pinned_kernel(&m);
            grad_check(&mut m.view(Group::Extractor), STEP, |v| {
                let l = v.model.outer_loss(None, None, &traj, &kernel)?;
                Ok(corrupt(l, &v.params_vec(), fault))
            })?
        }
        "outer-loss" => {
            let mut m = tiny_model(seed, Method::PcadaFull)?;
            let src = LabeledBatch::new(uniform(BATCH, INPUT, &mut rng), labels(BATCH))?;
            let traj: Vec<Matrix> = (0..3).map(|_| uniform(BATCH, INPUT, &mut rng)).collect();
            let anchor = m.reps(&uniform(BATCH, INPUT, &mut rng))?;
            let kernel = pinned_kernel(&m);
            grad_check(&mut m.view(Group::Extractor), STEP, |v| {
                let l = v.model.outer_loss(Some(&src), Some(&anchor), &traj, &kernel)?;
                Ok(corrupt(l, &v.params_vec(), fault))
            })?
        }
        other => return Err(Error::Input(format!("unknown gradient case {other:?}"))),
    };
    Ok(CaseResult {
        name: name.to_string(),
        max_rel_error: report.max_rel_error,
        params: report.params,
        passed: report.max_rel_error < TOLERANCE,
    })
}

/// Runs every case. `fault` names a case whose loss is deliberately made
/// inconsistent with its gradient, to show the suite catches it.
pub fn run_suite(seed: u64, fault: Option<&str>) -> Result<SuiteReport> {
    if let Some(f) = fault {
        if !CASES.contains(&f) {
            return Err(Error::Input(format!("unknown gradient case {f:?}")));
        }
    }
    let cases = CASES
        .iter()
        .map(|&name| check_case(name, seed, fault == Some(name)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        step: STEP,
        tolerance: TOLERANCE,
        cases,
    })
}
