//! Run configuration: every tunable in one JSON document, addressable by
//! dotted keys such as `apm.delta_d` or `meta.max_inner`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::apm::AnnealSchedule;
use crate::data::GeneratorConfig;
use crate::divergence::KernelConfig;
use crate::nn::SgdConfig;
use crate::sam::SamInit;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SourceOnly,
    JmmdSequential,
    PcadaNoApm,
    PcadaNoSam,
    PcadaFull,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SourceOnly,
        Method::JmmdSequential,
        Method::PcadaNoApm,
        Method::PcadaNoSam,
        Method::PcadaFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source-only",
            Method::JmmdSequential => "jmmd-sequential",
            Method::PcadaNoApm => "pcada-no-apm",
            Method::PcadaNoSam => "pcada-no-sam",
            Method::PcadaFull => "pcada-full",
        }
    }

    pub fn uses_mask(self) -> bool {
        matches!(self, Method::PcadaFull | Method::PcadaNoApm)
    }

    pub fn uses_replay(self) -> bool {
        matches!(self, Method::PcadaFull | Method::PcadaNoSam)
    }

    pub fn is_pcada(self) -> bool {
        matches!(self, Method::PcadaFull | Method::PcadaNoApm | Method::PcadaNoSam)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output width of the feature extractor (= mask and prototype dim).
    pub feature_dim: usize,
    pub phi_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            phi_hidden: vec![32],
            classifier_hidden: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApmConfig {
    pub delta_d: f64,
    pub t1: f64,
    pub t2: f64,
    /// Plateau of the prototype update rate η(t).
    pub eta_f: f64,
    /// Plateau of the replay-loss weight η′(t).
    pub eta_replay_f: f64,
    pub sce_a: f64,
    pub sce_b: f64,
}

impl Default for ApmConfig {
    fn default() -> Self {
        Self {
            delta_d: 0.8,
            t1: 20.0,
            t2: 40.0,
            eta_f: 0.1,
            eta_replay_f: 0.1,
            sce_a: 0.2,
            sce_b: 1.0,
        }
    }
}

impl ApmConfig {
    pub fn eta(&self) -> AnnealSchedule {
        AnnealSchedule {
            t1: self.t1,
            t2: self.t2,
            eta_final: self.eta_f,
        }
    }

    pub fn eta_replay(&self) -> AnnealSchedule {
        AnnealSchedule {
            t1: self.t1,
            t2: self.t2,
            eta_final: self.eta_replay_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub alpha_in: f64,
    pub alpha_out: f64,
    pub momentum: f64,
    pub weight_decay_in: f64,
    pub weight_decay_out: f64,
    pub pretrain_lr: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            alpha_in: 0.01,
            alpha_out: 0.001,
            momentum: 0.9,
            weight_decay_in: 0.0,
            weight_decay_out: 0.001,
            pretrain_lr: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn inner(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.alpha_in,
            momentum: self.momentum,
            weight_decay: self.weight_decay_in,
        }
    }

    pub fn outer(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.alpha_out,
            momentum: self.momentum,
            weight_decay: self.weight_decay_out,
        }
    }

    pub fn pretrain(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.pretrain_lr,
            momentum: self.momentum,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    /// Domains per sampled meta-training trajectory.
    pub trajectory_len: usize,
    /// Adaptation passes per arriving domain at test time; `max_inner`
    /// when unset.
    pub test_passes: Option<usize>,
    /// Fill row `i` of R from a fresh online pass over domains `0..=i`
    /// instead of a single pass over the whole stream.
    pub prefix_runs: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            max_outer: 100,
            max_inner: 5,
            pretrain_epochs: 50,
            batch_size: 16,
            trajectory_len: 10,
            test_passes: None,
            prefix_runs: false,
        }
    }
}

impl MetaConfig {
    pub fn passes(&self) -> usize {
        self.test_passes.unwrap_or(self.max_inner)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    pub data: GeneratorConfig,
    pub model: ModelConfig,
    pub apm: ApmConfig,
    pub sam: SamInit,
    pub divergence: KernelConfig,
    pub optim: OptimConfig,
    pub meta: MetaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::PcadaFull,
            data: GeneratorConfig::default(),
            model: ModelConfig::default(),
            apm: ApmConfig::default(),
            sam: SamInit::default(),
            divergence: KernelConfig::default(),
            optim: OptimConfig::default(),
            meta: MetaConfig::default(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be non-negative, got {v}")))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::config(key, "must be at least 1"))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        Self::from_value(v)
    }

    fn from_value(v: Value) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.data.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    /// Applies `key=value` overrides. The value is parsed as JSON and taken
    /// as a bare string when that fails. Keys must already exist.
    pub fn apply_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = self.to_value();
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o, "override must look like key=value"))?;
            let key = key.trim();
            let value: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            let mut node = &mut root;
            for part in key.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| Error::config(key, "unknown key"))?;
            }
            *node = value;
            serde_json::from_value::<RunConfig>(root.clone()).map_err(|e| Error::config(key, e.to_string()))?;
        }
        Self::from_value(root)
    }

    /// Checks every precondition that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let m = &self.model;
        at_least_one("model.feature_dim", m.feature_dim)?;
        if m.phi_hidden.contains(&0) {
            return Err(Error::config("model.phi_hidden", "hidden widths must be at least 1"));
        }
        if m.classifier_hidden.contains(&0) {
            return Err(Error::config("model.classifier_hidden", "hidden widths must be at least 1"));
        }
        let a = &self.apm;
        non_negative("apm.delta_d", a.delta_d)?;
        non_negative("apm.sce_a", a.sce_a)?;
        non_negative("apm.sce_b", a.sce_b)?;
        if !(a.eta_f >= 0.0 && a.eta_f <= 1.0) {
            return Err(Error::config("apm.eta_f", "must lie in [0, 1]"));
        }
        non_negative("apm.eta_replay_f", a.eta_replay_f)?;
        a.eta().validate()?;
        at_least_one("sam.encoder_dim", self.sam.encoder_dim)?;
        non_negative("sam.decoder_weight_scale", self.sam.decoder_weight_scale)?;
        self.divergence.validate()?;
        let o = &self.optim;
        positive("optim.alpha_in", o.alpha_in)?;
        positive("optim.alpha_out", o.alpha_out)?;
        positive("optim.pretrain_lr", o.pretrain_lr)?;
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
        }
        non_negative("optim.weight_decay_in", o.weight_decay_in)?;
        non_negative("optim.weight_decay_out", o.weight_decay_out)?;
        let mt = &self.meta;
        at_least_one("meta.max_outer", mt.max_outer)?;
        at_least_one("meta.max_inner", mt.max_inner)?;
        at_least_one("meta.pretrain_epochs", mt.pretrain_epochs)?;
        at_least_one("meta.batch_size", mt.batch_size)?;
        if mt.trajectory_len < 2 {
            return Err(Error::config("meta.trajectory_len", "need at least 2 domains per trajectory"));
        }
        if let Some(p) = mt.test_passes {
            at_least_one("meta.test_passes", p)?;
        }
        if mt.trajectory_len > self.data.domains {
            return Err(Error::config(
                "meta.trajectory_len",
                format!("exceeds the {} meta-training domains", self.data.domains),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn dotted_overrides() {
        let c = RunConfig::default()
            .apply_overrides(&["apm.delta_d=1.5", "data.angle_range=[0,30]", "method=pcada-no-sam", "meta.test_passes=2"])
            .unwrap();
        assert_eq!(c.apm.delta_d, 1.5);
        assert_eq!(c.data.angle_range, [0.0, 30.0]);
        assert_eq!(c.method, Method::PcadaNoSam);
        assert_eq!(c.meta.passes(), 2);
    }

    #[test]
    fn unknown_and_mistyped_keys_name_the_key() {
        let err = RunConfig::default().apply_overrides(&["apm.nope=1"]).unwrap_err();
        assert!(err.to_string().contains("apm.nope"));
        let err = RunConfig::default().apply_overrides(&["meta.max_inner=lots"]).unwrap_err();
        assert!(err.to_string().contains("meta.max_inner"));
        let err = RunConfig::default().apply_overrides(&["method=dann"]).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(RunConfig::from_json(r#"{"apm": {"delta": 1}}"#).is_err());
    }

    #[test]
    fn validation_names_the_key() {
        let c = RunConfig::default().apply_overrides(&["meta.max_outer=0"]).unwrap();
        match c.validate().unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "meta.max_outer"),
            e => panic!("unexpected {e}"),
        }
        let c = RunConfig::default().apply_overrides(&["data.angle_range=[60,0]"]).unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("data.angle_range"));
    }

    #[test]
    fn seed_flows_into_data() {
        let c = RunConfig::default().apply_overrides(&["seed=7"]).unwrap();
        assert_eq!(c.data.seed, 7);
        assert!(!serde_json::to_string(&c.data).unwrap().contains("seed"));
    }
}
