//! Meta-training, online testing and the per-method runner.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CachedReps, PCAdaModel};
use crate::config::{Method, RunConfig};
use crate::data::{sample_rows, sample_trajectory, DomainSnapshot, EvolvingDataset, LabeledBatch};
use crate::linalg::Matrix;
use crate::metrics::{RMatrix, RunReport};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub max_outer: usize,
    pub max_inner: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub trajectory_len: usize,
    /// Adaptation passes per arriving domain at test time.
    pub test_passes: usize,
    pub seed: u64,
}

impl TrainPlan {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            max_outer: cfg.meta.max_outer,
            max_inner: cfg.meta.max_inner,
            pretrain_epochs: cfg.meta.pretrain_epochs,
            batch_size: cfg.meta.batch_size,
            trajectory_len: cfg.meta.trajectory_len,
            test_passes: cfg.meta.passes(),
            seed: cfg.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("meta.max_outer", self.max_outer),
            ("meta.max_inner", self.max_inner),
            ("meta.pretrain_epochs", self.pretrain_epochs),
            ("meta.batch_size", self.batch_size),
            ("meta.test_passes", self.test_passes),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        Ok(())
    }
}

fn batch_of(m: &Matrix, size: usize, rng: &mut impl rand::Rng) -> Matrix {
    m.select_rows(&sample_rows(m.rows(), size, rng))
}

fn labeled_batch_of(b: &LabeledBatch, size: usize, rng: &mut impl rand::Rng) -> LabeledBatch {
    b.select(&sample_rows(b.len(), size, rng))
}

/// Source pretraining followed by `max_outer` rounds of: sample a
/// trajectory, `max_inner` sweeps of inner steps over its support batches in
/// time order, one outer step on its query batches.
pub fn meta_train(
    model: &mut PCAdaModel,
    method: Method,
    source: &LabeledBatch,
    domains: &[DomainSnapshot],
    plan: &TrainPlan,
) -> Result<()> {
    plan.validate()?;
    model.sam.set_encoder_frozen(false);
    let opt = model.pretrain_opt;
    model.pretrain_source(source, plan.pretrain_epochs, &opt, plan.seed)?;
    if method == Method::SourceOnly {
        return Ok(());
    }
    if plan.trajectory_len > domains.len() {
        return Err(Error::config(
            "meta.trajectory_len",
            format!("{} domains per trajectory, {} available", plan.trajectory_len, domains.len()),
        ));
    }
    let mut traj_rng = stream(plan.seed, "train/trajectory");
    let mut batch_rng = stream(plan.seed, "train/batches");
    for t in 0..plan.max_outer {
        let picked = sample_trajectory(domains.len(), plan.trajectory_len, &mut traj_rng)?;
        let support: Vec<Matrix> = picked
            .iter()
            .map(|&i| batch_of(&domains[i].support, plan.batch_size, &mut batch_rng))
            .collect();
        let query: Vec<Matrix> = picked
            .iter()
            .map(|&i| batch_of(&domains[i].query, plan.batch_size, &mut batch_rng))
            .collect();
        for _ in 0..plan.max_inner {
            model.counters.prototype_sweeps += u64::from(method.is_pcada());
            for x in &support {
                let s = labeled_batch_of(source, plan.batch_size, &mut batch_rng);
                if method == Method::JmmdSequential {
                    model.joint_step(Some(&s), None, x)?;
                } else {
                    model.inner_step(Some(&s), x, t as f64)?;
                }
            }
        }
        if method.is_pcada() {
            let s = labeled_batch_of(source, plan.batch_size, &mut batch_rng);
            model.outer_step(Some(&s), None, &query)?;
        }
    }
    Ok(())
}

/// One row of the mask dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRow {
    pub domain: u64,
    /// `support-<pass>` or `query`.
    pub batch: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub r: RMatrix,
    pub masks: Vec<MaskRow>,
}

/// Online pass over `stream`: adapt to each arriving domain from its
/// unlabelled batches only, then measure every domain seen so far. The
/// encoder is frozen throughout.
pub fn meta_test(model: &mut PCAdaModel, method: Method, domains: &[DomainSnapshot], plan: &TrainPlan) -> Result<TestOutcome> {
    plan.validate()?;
    if domains.is_empty() {
        return Err(Error::Input("no domains to test on".into()));
    }
    for w in domains.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(Error::Input(format!(
                "domain timestamps out of order: {} then {}",
                w[0].timestamp, w[1].timestamp
            )));
        }
    }
    model.sam.set_encoder_frozen(true);
    model.reset_momentum();
    // schedules sit on their plateaus once training is over
    let t_test = model.eta.t2.max(model.eta_replay.t2);
    let mut rng = stream(plan.seed, "test/batches");
    let mut r = RMatrix::new(domains.len())?;
    let mut masks = Vec::new();
    let mut prev: Option<CachedReps> = None;
    for (i, dom) in domains.iter().enumerate() {
        if method != Method::SourceOnly {
            for pass in 0..plan.test_passes {
                let x = batch_of(&dom.support, plan.batch_size, &mut rng);
                if model.hyper.use_mask {
                    masks.push(MaskRow {
                        domain: dom.timestamp,
                        batch: format!("support-{pass}"),
                        values: model.mask_of(&x)?.values().to_vec(),
                    });
                }
                if method == Method::JmmdSequential {
                    model.joint_step(None, prev.as_ref(), &x)?;
                } else {
                    model.inner_step(None, &x, t_test)?;
                }
            }
            let q = batch_of(&dom.query, plan.batch_size, &mut rng);
            if method.is_pcada() {
                if let Some(p) = &prev {
                    model.outer_step(None, Some(p), std::slice::from_ref(&q))?;
                }
            }
            if model.hyper.use_mask {
                masks.push(MaskRow {
                    domain: dom.timestamp,
                    batch: "query".into(),
                    values: model.mask_of(&q)?.values().to_vec(),
                });
            }
            prev = Some(model.reps(&q)?);
        }
        for (j, d) in domains[..=i].iter().enumerate() {
            r.set(i, j, model.accuracy(&d.eval)?)?;
        }
    }
    Ok(TestOutcome { r, masks })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub masks: Vec<MaskRow>,
    /// Model after meta-training (before any online adaptation).
    pub trained: PCAdaModel,
    /// Model after the online pass.
    pub tested: PCAdaModel,
}

fn check_split(cfg: &RunConfig, data: &EvolvingDataset) -> Result<()> {
    cfg.validate()?;
    data.validate()?;
    if cfg.data.test_domains == 0 {
        return Err(Error::config("data.test_domains", "need at least one online test domain"));
    }
    Ok(())
}

/// Fresh model for `cfg`, meta-trained on everything but the last
/// `cfg.data.test_domains` domains.
pub fn train_model(cfg: &RunConfig, data: &EvolvingDataset) -> Result<PCAdaModel> {
    check_split(cfg, data)?;
    let (train, _) = data.split(cfg.data.test_domains)?;
    let mut model = PCAdaModel::new(cfg, cfg.method, data.input_dim(), data.classes)?;
    meta_train(&mut model, cfg.method, &data.source, train, &TrainPlan::from_config(cfg))?;
    Ok(model)
}

/// Online pass of a trained model over the last `cfg.data.test_domains`
/// domains.
pub fn evaluate(cfg: &RunConfig, data: &EvolvingDataset, trained: PCAdaModel) -> Result<RunOutcome> {
    let started = Instant::now();
    check_split(cfg, data)?;
    if !trained.is_pretrained() {
        return Err(Error::State("model has not been trained".into()));
    }
    let (_, test) = data.split(cfg.data.test_domains)?;
    let plan = TrainPlan::from_config(cfg);
    let method = cfg.method;
    let mut checksums = trained.checksums("trained");
    let mut model = trained.clone();
    let outcome = if cfg.meta.prefix_runs {
        let mut r = RMatrix::new(test.len())?;
        let mut last = None;
        for i in 0..test.len() {
            let mut m = trained.clone();
            let o = meta_test(&mut m, method, &test[..=i], &plan)?;
            for j in 0..=i {
                r.set(i, j, o.r.get(i, j).expect("row filled"))?;
            }
            last = Some((m, o.masks));
        }
        let (m, masks) = last.expect("at least one test domain");
        model = m;
        TestOutcome { r, masks }
    } else {
        meta_test(&mut model, method, test, &plan)?
    };
    checksums.extend(model.checksums("tested"));

    let mut report = RunReport::new(
        method.name(),
        cfg.seed,
        cfg.to_value(),
        test.iter().map(|d| d.timestamp).collect(),
        outcome.r,
    )?;
    report.counters = model.counters.to_map();
    report.checksums = checksums;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(RunOutcome {
        report,
        masks: outcome.masks,
        trained,
        tested: model,
    })
}

/// Full run of `cfg.method` on `data`: the last `cfg.data.test_domains`
/// domains form the online stream, the rest are for meta-training.
pub fn run_method(cfg: &RunConfig, data: &EvolvingDataset) -> Result<RunOutcome> {
    let started = Instant::now();
    check_split(cfg, data)?;
    let init = PCAdaModel::new(cfg, cfg.method, data.input_dim(), data.classes)?.checksums("init");
    let trained = train_model(cfg, data)?;
    let mut out = evaluate(cfg, data, trained)?;
    out.report.checksums.extend(init);
    out.report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(out)
}
