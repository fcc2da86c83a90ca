//! The adaptation model and its inner/outer update steps.
//!
//! A batch flows `x → φ(x) = z → z ⊙ mask(z) = z̃ → f_θ(z̃) = logits → p`.
//! Inner steps move only the classifier θ (and the prototypes); outer steps
//! move only φ and the mask autoencoder.

mod run;

pub use run::{evaluate, meta_test, meta_train, run_method, train_model, MaskRow, RunOutcome, TestOutcome, TrainPlan};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::apm::{sce_loss, AnnealSchedule, PrototypeBank};
use crate::config::{Method, RunConfig};
use crate::data::LabeledBatch;
use crate::divergence::{alpha_hat, joint_mmd, KernelConfig, Level};
use crate::linalg::Matrix;
use crate::nn::{softmax_backward, softmax_cross_entropy, softmax_rows};
use crate::nn::{checksum, checksum_values, Activation, DenseNet, NamedTensor, ParamSnapshot, Parameters, SgdConfig, Trace};
use crate::rng::stream;
use crate::sam::{masked_features, masked_features_backward, ChannelMask, SamState, SamTrace};
use crate::{Error, Result};

/// Fixed per-run knobs of the model's losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub delta_d: f64,
    pub sce_a: f64,
    pub sce_b: f64,
    pub kernel: KernelConfig,
    /// Mask from the autoencoder; all-ones otherwise.
    pub use_mask: bool,
    /// Prototype pseudo-labelling and replay.
    pub prototypes: bool,
    /// Weight the replay loss by η′(t); zero otherwise.
    pub replay: bool,
    /// Rows per mask computation at evaluation time.
    pub chunk: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    pub pretrain_steps: u64,
    pub prototype_sweeps: u64,
    pub inner_steps: u64,
    pub outer_steps: u64,
    pub test_inner_steps: u64,
    pub test_outer_steps: u64,
    pub pseudo_labels: u64,
}

impl StepCounters {
    pub fn to_map(&self) -> BTreeMap<String, u64> {
        serde_json::from_value(serde_json::to_value(self).expect("counters serialize")).expect("flat map")
    }
}

/// Representations of a batch that stand in for a domain once its raw data
/// is gone.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedReps {
    pub features: Matrix,
    pub probs: Matrix,
}

/// One forward pass with everything needed to backpropagate it.
struct Pass {
    phi: Trace,
    sam: Option<SamTrace>,
    mask: ChannelMask,
    zm: Matrix,
    cls: Trace,
    probs: Matrix,
}

/// Gradient seeds for one pass.
#[derive(Default)]
struct Seeds {
    features: Option<Matrix>,
    probs: Option<Matrix>,
    logits: Option<Matrix>,
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) -> Result<()> {
    match slot {
        Some(s) => s.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is {v}")))
    }
}

/// Argmax per row, ties to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PCAdaModel {
    pub phi: DenseNet,
    pub classifier: DenseNet,
    pub sam: SamState,
    pub bank: Option<PrototypeBank>,
    pub eta: AnnealSchedule,
    pub eta_replay: AnnealSchedule,
    pub inner_opt: SgdConfig,
    pub outer_opt: SgdConfig,
    pub pretrain_opt: SgdConfig,
    pub hyper: Hyper,
    pub counters: StepCounters,
    pretrained: bool,
}

impl PCAdaModel {
    /// Fresh model for `method`, initialized from the run seed.
    pub fn new(cfg: &RunConfig, method: Method, input_dim: usize, classes: usize) -> Result<Self> {
        let m = &cfg.model;
        let mut dims = vec![input_dim];
        dims.extend(&m.phi_hidden);
        dims.push(m.feature_dim);
        let phi = DenseNet::mlp(&dims, Activation::Relu, Activation::Identity, &mut stream(cfg.seed, "init/phi"))?;
        let mut dims = vec![m.feature_dim];
        dims.extend(&m.classifier_hidden);
        dims.push(classes);
        let classifier = DenseNet::mlp(
            &dims,
            Activation::Relu,
            Activation::Identity,
            &mut stream(cfg.seed, "init/classifier"),
        )?;
        let sam = SamState::random(m.feature_dim, &cfg.sam, &mut stream(cfg.seed, "init/sam"))?;
        let (eta, eta_replay) = (cfg.apm.eta(), cfg.apm.eta_replay());
        eta.validate()?;
        eta_replay.validate()?;
        let (inner_opt, outer_opt, pretrain_opt) = (cfg.optim.inner(), cfg.optim.outer(), cfg.optim.pretrain());
        inner_opt.validate()?;
        outer_opt.validate()?;
        cfg.divergence.validate()?;
        Ok(Self {
            phi,
            classifier,
            sam,
            bank: None,
            eta,
            eta_replay,
            inner_opt,
            outer_opt,
            pretrain_opt,
            hyper: Hyper {
                delta_d: cfg.apm.delta_d,
                sce_a: cfg.apm.sce_a,
                sce_b: cfg.apm.sce_b,
                kernel: cfg.divergence.clone(),
                use_mask: method.uses_mask(),
                prototypes: method.is_pcada(),
                replay: method.uses_replay(),
                chunk: cfg.meta.batch_size,
            },
            counters: StepCounters::default(),
            pretrained: false,
        })
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    fn require_pretrained(&self) -> Result<()> {
        if self.pretrained {
            Ok(())
        } else {
            Err(Error::State("model has not been pretrained on the source".into()))
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier.out_dim()
    }

    fn pass_with(&self, x: &Matrix, use_mask: bool) -> Result<Pass> {
        let phi = self.phi.forward(x)?;
        let z = phi.output();
        let (sam, mask) = if use_mask {
            let tr = self.sam.mask_traced(z)?;
            let m = tr.mask().clone();
            (Some(tr), m)
        } else {
            (None, ChannelMask::ones(z.cols()))
        };
        let zm = masked_features(z, &mask)?;
        let cls = self.classifier.forward(&zm)?;
        let probs = softmax_rows(cls.output());
        Ok(Pass {
            phi,
            sam,
            mask,
            zm,
            cls,
            probs,
        })
    }

    fn pass(&self, x: &Matrix) -> Result<Pass> {
        self.pass_with(x, self.hyper.use_mask)
    }

    fn levels<'a>(&self, features: &'a Matrix, probs: &'a Matrix) -> Vec<&'a Matrix> {
        self.hyper
            .kernel
            .levels
            .iter()
            .map(|l| match l {
                Level::Features => features,
                Level::Predictions => probs,
            })
            .collect()
    }

    fn seed_levels(&self, seeds: &mut Seeds, grads: &[Matrix], scale: f64) -> Result<()> {
        for (l, g) in self.hyper.kernel.levels.iter().zip(grads) {
            let g = g.scale(scale);
            match l {
                Level::Features => accumulate(&mut seeds.features, g)?,
                Level::Predictions => accumulate(&mut seeds.probs, g)?,
            }
        }
        Ok(())
    }

    /// Backpropagates seeds through the classifier, and with `through_features`
    /// on into the mask autoencoder and φ as well.
    fn backward_pass(&mut self, p: &Pass, seeds: Seeds, through_features: bool) -> Result<()> {
        let mut g_logits = seeds.logits;
        if let Some(gp) = seeds.probs {
            accumulate(&mut g_logits, softmax_backward(&p.probs, &gp)?)?;
        }
        let mut g_zm = seeds.features;
        if let Some(gl) = g_logits {
            let g_in = self.classifier.backward(&p.cls, &gl)?;
            accumulate(&mut g_zm, g_in)?;
        }
        if !through_features {
            return Ok(());
        }
        let Some(g_zm) = g_zm else { return Ok(()) };
        let (mut g_z, g_mask) = masked_features_backward(p.phi.output(), &p.mask, &g_zm)?;
        if let Some(tr) = &p.sam {
            g_z.add_assign(&self.sam.backward(tr, &g_mask)?)?;
        }
        self.phi.backward(&p.phi, &g_z)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.phi.zero_grad();
        self.classifier.zero_grad();
        self.sam.zero_grad();
    }

    pub fn reset_momentum(&mut self) {
        self.phi.reset_momentum();
        self.classifier.reset_momentum();
        self.sam.reset_momentum();
    }

    /// Classifier inputs (masked features), with one mask per `chunk` rows.
    pub fn masked_features(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.reps(x)?.features)
    }

    /// Masked features and predictions of a batch under one mask.
    pub fn reps(&self, x: &Matrix) -> Result<CachedReps> {
        let p = self.pass(x)?;
        Ok(CachedReps {
            features: p.zm,
            probs: p.probs,
        })
    }

    pub fn mask_of(&self, x: &Matrix) -> Result<ChannelMask> {
        if self.hyper.use_mask {
            self.sam.mask(&self.phi.predict(x)?)
        } else {
            Ok(ChannelMask::ones(self.sam.feature_dim()))
        }
    }

    /// Predicted labels; the mask is recomputed for every `chunk` rows.
    pub fn predict_labels(&self, x: &Matrix) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(x.rows());
        let idx: Vec<usize> = (0..x.rows()).collect();
        for c in idx.chunks(self.hyper.chunk.max(1)) {
            let p = self.pass(&x.select_rows(c))?;
            out.extend(argmax_rows(p.cls.output()));
        }
        Ok(out)
    }

    /// Fraction of correctly classified rows.
    pub fn accuracy(&self, eval: &LabeledBatch) -> Result<f64> {
        if eval.is_empty() {
            return Err(Error::Input("accuracy of an empty eval set".into()));
        }
        let pred = self.predict_labels(&eval.features)?;
        let hits = pred.iter().zip(&eval.labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / eval.len() as f64)
    }

    /// One cross-entropy step on φ and θ with the mask forced open.
    pub fn pretrain_step(&mut self, batch: &LabeledBatch, opt: &SgdConfig) -> Result<f64> {
        self.zero_grad();
        let p = self.pass_with(&batch.features, false)?;
        let ce = softmax_cross_entropy(p.cls.output(), &batch.labels)?;
        finite("pretraining loss", ce.loss)?;
        let seeds = Seeds {
            logits: Some(ce.grad),
            ..Seeds::default()
        };
        self.backward_pass(&p, seeds, true)?;
        self.phi.sgd_step(opt);
        self.classifier.sgd_step(opt);
        self.zero_grad();
        self.counters.pretrain_steps += 1;
        Ok(ce.loss)
    }

    /// Cross-entropy pretraining on the source, then prototype
    /// initialization from masked source features.
    pub fn pretrain_source(&mut self, source: &LabeledBatch, epochs: usize, opt: &SgdConfig, seed: u64) -> Result<()> {
        if source.is_empty() {
            return Err(Error::Input("source domain is empty".into()));
        }
        if epochs == 0 {
            return Err(Error::config("meta.pretrain_epochs", "must be at least 1"));
        }
        opt.validate()?;
        let mut rng = stream(seed, "train/pretrain");
        for _ in 0..epochs {
            let order = crate::data::sample_rows(source.len(), source.len(), &mut rng);
            for c in order.chunks(self.hyper.chunk.max(1)) {
                self.pretrain_step(&source.select(c), opt)?;
            }
        }
        self.phi.reset_momentum();
        self.classifier.reset_momentum();
        self.init_prototypes(source)?;
        self.pretrained = true;
        Ok(())
    }

    pub fn init_prototypes(&mut self, source: &LabeledBatch) -> Result<()> {
        let mut feats: Option<Matrix> = None;
        let idx: Vec<usize> = (0..source.len()).collect();
        for c in idx.chunks(self.hyper.chunk.max(1)) {
            let f = self.masked_features(&source.features.select_rows(c))?;
            feats = Some(match feats {
                None => f,
                Some(acc) => acc.vstack(&f)?,
            });
        }
        let feats = feats.ok_or_else(|| Error::Input("source domain is empty".into()))?;
        self.bank = Some(PrototypeBank::from_labeled(&feats, &source.labels, self.classes())?);
        Ok(())
    }

    /// Inner objective: CE on the labelled source batch, divergence between
    /// source and target representations, and `replay_weight` × the replay
    /// loss. Accumulates classifier gradients only; returns the loss.
    pub fn inner_loss(
        &mut self,
        source: Option<&LabeledBatch>,
        target: &Matrix,
        replay_weight: f64,
        kernel: &KernelConfig,
    ) -> Result<f64> {
        let mut loss = 0.0;
        if let Some(s) = source {
            let sp = self.pass(&s.features)?;
            let tp = self.pass(target)?;
            let ce = softmax_cross_entropy(sp.cls.output(), &s.labels)?;
            let d = joint_mmd(&self.levels(&sp.zm, &sp.probs), &self.levels(&tp.zm, &tp.probs), kernel)?;
            loss += ce.loss + d.value;
            let mut s_seeds = Seeds {
                logits: Some(ce.grad),
                ..Seeds::default()
            };
            self.seed_levels(&mut s_seeds, &d.grad_a, 1.0)?;
            let mut t_seeds = Seeds::default();
            self.seed_levels(&mut t_seeds, &d.grad_b, 1.0)?;
            self.backward_pass(&sp, s_seeds, false)?;
            self.backward_pass(&tp, t_seeds, false)?;
        }
        if replay_weight != 0.0 {
            let bank = self
                .bank
                .as_ref()
                .ok_or_else(|| Error::State("no prototypes to replay".into()))?;
            let l = sce_loss(bank, &mut self.classifier, self.hyper.sce_a, self.hyper.sce_b, replay_weight)?;
            loss += replay_weight * l;
        }
        Ok(loss)
    }

    /// Prototype sweep over the target batch, then one SGD step on θ.
    /// `source` is absent during online testing.
    pub fn inner_step(&mut self, source: Option<&LabeledBatch>, target: &Matrix, t: f64) -> Result<f64> {
        self.require_pretrained()?;
        if self.hyper.prototypes {
            let feats = self.masked_features(target)?;
            let eta = self.eta.eta(t);
            let bank = self.bank.as_mut().expect("pretrained models have prototypes");
            self.counters.pseudo_labels += bank.progressive_pass(&feats, self.hyper.delta_d, eta)? as u64;
        }
        let w = if self.hyper.replay { self.eta_replay.eta(t) } else { 0.0 };
        self.zero_grad();
        let kernel = self.hyper.kernel.clone();
        let loss = finite("inner loss", self.inner_loss(source, target, w, &kernel)?)?;
        self.classifier.sgd_step(&self.inner_opt);
        self.zero_grad();
        if source.is_some() {
            self.counters.inner_steps += 1;
        } else {
            self.counters.test_inner_steps += 1;
        }
        Ok(loss)
    }

    /// Outer objective: CE on the labelled source query, the mean source-to-
    /// target divergence, and the largest divergence between consecutive
    /// domains of `[anchor?] ++ trajectory`. The anchor is a constant.
    /// Accumulates gradients in φ and the mask autoencoder (the classifier's
    /// buffers are cleared afterwards).
    pub fn outer_loss(
        &mut self,
        source_query: Option<&LabeledBatch>,
        anchor: Option<&CachedReps>,
        trajectory: &[Matrix],
        kernel: &KernelConfig,
    ) -> Result<f64> {
        let offset = usize::from(anchor.is_some());
        if trajectory.len() + offset < 2 {
            return Err(Error::Input(format!(
                "outer step needs a trajectory of at least 2 domains, got {}",
                trajectory.len() + offset
            )));
        }
        let passes = trajectory.iter().map(|x| self.pass(x)).collect::<Result<Vec<_>>>()?;
        let mut seeds: Vec<Seeds> = passes.iter().map(|_| Seeds::default()).collect();

        let mut seq: Vec<Vec<&Matrix>> = Vec::with_capacity(passes.len() + offset);
        if let Some(a) = anchor {
            seq.push(self.levels(&a.features, &a.probs));
        }
        seq.extend(passes.iter().map(|p| self.levels(&p.zm, &p.probs)));
        let rate = alpha_hat(&seq, kernel)?;
        let mut loss = rate.value;
        let (i, j) = (rate.argmax - 1, rate.argmax);
        if i >= offset {
            self.seed_levels(&mut seeds[i - offset], &rate.divergence.grad_a, 1.0)?;
        }
        self.seed_levels(&mut seeds[j - offset], &rate.divergence.grad_b, 1.0)?;

        if let Some(s) = source_query {
            let sp = self.pass(&s.features)?;
            let ce = softmax_cross_entropy(sp.cls.output(), &s.labels)?;
            loss += ce.loss;
            let mut s_seeds = Seeds {
                logits: Some(ce.grad),
                ..Seeds::default()
            };
            let w = 1.0 / passes.len() as f64;
            for (p, sd) in passes.iter().zip(seeds.iter_mut()) {
                let d = joint_mmd(&self.levels(&sp.zm, &sp.probs), &self.levels(&p.zm, &p.probs), kernel)?;
                loss += w * d.value;
                self.seed_levels(&mut s_seeds, &d.grad_a, w)?;
                self.seed_levels(sd, &d.grad_b, w)?;
            }
            self.backward_pass(&sp, s_seeds, true)?;
        }
        for (p, sd) in passes.iter().zip(seeds) {
            self.backward_pass(p, sd, true)?;
        }
        self.classifier.zero_grad();
        Ok(loss)
    }

    /// One SGD step on φ and, when masking is on, the autoencoder (the
    /// encoder only while unfrozen).
    pub fn outer_step(
        &mut self,
        source_query: Option<&LabeledBatch>,
        anchor: Option<&CachedReps>,
        trajectory: &[Matrix],
    ) -> Result<f64> {
        self.require_pretrained()?;
        self.zero_grad();
        let kernel = self.hyper.kernel.clone();
        let loss = finite("outer loss", self.outer_loss(source_query, anchor, trajectory, &kernel)?)?;
        self.phi.sgd_step(&self.outer_opt);
        if self.hyper.use_mask {
            self.sam.sgd_step(&self.outer_opt);
        }
        self.zero_grad();
        if source_query.is_some() {
            self.counters.outer_steps += 1;
        } else {
            self.counters.test_outer_steps += 1;
        }
        Ok(loss)
    }

    /// Sequential joint-MMD adaptation used by the baseline: CE on the source
    /// batch plus divergence to the source and/or the anchor, one step on
    /// both θ (inner optimizer) and φ (outer optimizer).
    pub fn joint_step(
        &mut self,
        source: Option<&LabeledBatch>,
        anchor: Option<&CachedReps>,
        target: &Matrix,
    ) -> Result<f64> {
        self.require_pretrained()?;
        if source.is_none() && anchor.is_none() {
            return Ok(0.0);
        }
        self.zero_grad();
        let kernel = self.hyper.kernel.clone();
        let tp = self.pass(target)?;
        let mut t_seeds = Seeds::default();
        let mut loss = 0.0;
        if let Some(a) = anchor {
            let d = joint_mmd(&self.levels(&a.features, &a.probs), &self.levels(&tp.zm, &tp.probs), &kernel)?;
            loss += d.value;
            self.seed_levels(&mut t_seeds, &d.grad_b, 1.0)?;
        }
        if let Some(s) = source {
            let sp = self.pass(&s.features)?;
            let ce = softmax_cross_entropy(sp.cls.output(), &s.labels)?;
            let d = joint_mmd(&self.levels(&sp.zm, &sp.probs), &self.levels(&tp.zm, &tp.probs), &kernel)?;
            loss += ce.loss + d.value;
            let mut s_seeds = Seeds {
                logits: Some(ce.grad),
                ..Seeds::default()
            };
            self.seed_levels(&mut s_seeds, &d.grad_a, 1.0)?;
            self.seed_levels(&mut t_seeds, &d.grad_b, 1.0)?;
            self.backward_pass(&sp, s_seeds, true)?;
        }
        self.backward_pass(&tp, t_seeds, true)?;
        finite("joint loss", loss)?;
        self.classifier.sgd_step(&self.inner_opt);
        self.phi.sgd_step(&self.outer_opt);
        self.zero_grad();
        if source.is_some() {
            self.counters.inner_steps += 1;
        } else {
            self.counters.test_inner_steps += 1;
        }
        Ok(loss)
    }

    /// Checksums of every parameter group, keyed `<phase>.<group>`.
    pub fn checksums(&self, phase: &str) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert(format!("{phase}.phi"), checksum(&self.phi));
        m.insert(format!("{phase}.classifier"), checksum(&self.classifier));
        m.insert(format!("{phase}.encoder"), checksum(self.sam.encoder()));
        m.insert(format!("{phase}.decoder"), checksum(self.sam.decoder()));
        if let Some(b) = &self.bank {
            m.insert(format!("{phase}.prototypes"), checksum_values(b.as_matrix().as_slice()));
        }
        m
    }

    /// Every learned tensor, prototypes included.
    pub fn snapshot(&self) -> ParamSnapshot {
        let mut t = self.phi.named_tensors("phi.");
        t.extend(self.classifier.named_tensors("classifier."));
        t.extend(self.sam.named_tensors());
        if let Some(b) = &self.bank {
            t.push(NamedTensor {
                name: "prototypes".into(),
                shape: vec![b.classes(), b.dim()],
                data: b.as_matrix().as_slice().to_vec(),
            });
        }
        ParamSnapshot::new(t)
    }

    /// Restores a trained model saved by [`Self::snapshot`]. Architecture
    /// must match; the result counts as pretrained.
    pub fn load_snapshot(&mut self, snap: &ParamSnapshot) -> Result<()> {
        self.phi.load_named("phi.", snap)?;
        self.classifier.load_named("classifier.", snap)?;
        self.sam.load_named(snap)?;
        let (k, d) = (self.classes(), self.phi.out_dim());
        let protos = snap.get("prototypes", &[k, d])?;
        self.bank = Some(PrototypeBank::new(Matrix::from_vec(k, d, protos.to_vec())?)?);
        self.reset_momentum();
        self.pretrained = true;
        Ok(())
    }

    pub fn view(&mut self, group: Group) -> GroupView<'_> {
        GroupView { model: self, group }
    }
}

/// Parameter groups with disjoint update rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// θ, moved by inner steps.
    Classifier,
    /// φ plus the mask autoencoder, moved by outer steps.
    Extractor,
}

/// A model seen through one parameter group, for gradient checks.
pub struct GroupView<'a> {
    pub model: &'a mut PCAdaModel,
    pub group: Group,
}

impl Parameters for GroupView<'_> {
    fn param_count(&self) -> usize {
        match self.group {
            Group::Classifier => self.model.classifier.param_count(),
            Group::Extractor => self.model.phi.param_count() + self.model.sam.param_count(),
        }
    }

    fn collect_params(&self, out: &mut Vec<f64>) {
        match self.group {
            Group::Classifier => self.model.classifier.collect_params(out),
            Group::Extractor => {
                self.model.phi.collect_params(out);
                self.model.sam.collect_params(out);
            }
        }
    }

    fn collect_grads(&self, out: &mut Vec<f64>) {
        match self.group {
            Group::Classifier => self.model.classifier.collect_grads(out),
            Group::Extractor => {
                self.model.phi.collect_grads(out);
                self.model.sam.collect_grads(out);
            }
        }
    }

    fn assign_params(&mut self, src: &[f64]) -> usize {
        match self.group {
            Group::Classifier => self.model.classifier.assign_params(src),
            Group::Extractor => {
                let n = self.model.phi.assign_params(src);
                n + self.model.sam.assign_params(&src[n..])
            }
        }
    }

    fn zero_grad(&mut self) {
        self.model.zero_grad();
    }

    fn sgd_step(&mut self, cfg: &SgdConfig) {
        match self.group {
            Group::Classifier => self.model.classifier.sgd_step(cfg),
            Group::Extractor => {
                self.model.phi.sgd_step(cfg);
                self.model.sam.sgd_step(cfg);
            }
        }
    }

    fn reset_momentum(&mut self) {
        match self.group {
            Group::Classifier => self.model.classifier.reset_momentum(),
            Group::Extractor => {
                self.model.phi.reset_momentum();
                self.model.sam.reset_momentum();
            }
        }
    }
}
