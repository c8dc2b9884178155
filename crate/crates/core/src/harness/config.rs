use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorSpec;
use crate::attacks::{AttackKind, AttackSpec};
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::rng::{derive_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Blobs,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Mean,
    Cc,
    Tm,
    Rfa,
    Scc,
}

/// One experiment, as a flat key-value document. `k`, `k_m` and `rounds`
/// are required; everything else has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::dataset")]
    pub dataset: DatasetSource,
    #[serde(default = "defaults::blobs_classes")]
    pub blobs_classes: usize,
    #[serde(default = "defaults::blobs_per_class")]
    pub blobs_per_class: usize,
    #[serde(default = "defaults::blobs_features")]
    pub blobs_features: usize,
    #[serde(default = "defaults::blobs_noise")]
    pub blobs_noise: f64,
    #[serde(default = "defaults::blobs_test_per_class")]
    pub blobs_test_per_class: usize,
    #[serde(default)]
    pub idx_train_images: Option<PathBuf>,
    #[serde(default)]
    pub idx_train_labels: Option<PathBuf>,
    #[serde(default)]
    pub idx_test_images: Option<PathBuf>,
    #[serde(default)]
    pub idx_test_labels: Option<PathBuf>,

    #[serde(default = "defaults::partition")]
    pub partition: PartitionKind,
    #[serde(default = "defaults::one")]
    pub dirichlet_alpha: f64,

    pub k: usize,
    pub k_m: usize,
    #[serde(default = "defaults::beta")]
    pub beta: f64,

    #[serde(default = "defaults::attack")]
    pub attack: AttackKind,
    #[serde(default)]
    pub attack_z: Option<f64>,
    #[serde(default = "defaults::rop_lambda")]
    pub rop_lambda: f64,
    #[serde(default = "defaults::one")]
    pub rop_rho: f64,
    #[serde(default = "defaults::rop_angle_deg")]
    pub rop_angle_deg: f64,
    #[serde(default = "defaults::ipm_epsilon")]
    pub ipm_epsilon: f64,
    #[serde(default)]
    pub alie_alternate: bool,

    #[serde(default = "defaults::aggregator")]
    pub aggregator: AggregatorKind,
    #[serde(default = "defaults::one")]
    pub cc_tau: f64,
    #[serde(default = "defaults::cc_iters")]
    pub cc_iters: usize,
    #[serde(default)]
    pub tm_trim: Option<usize>,
    #[serde(default = "defaults::rfa_max_iters")]
    pub rfa_max_iters: usize,
    #[serde(default = "defaults::rfa_tol")]
    pub rfa_tol: f64,
    #[serde(default = "defaults::scc_clusters")]
    pub scc_clusters: usize,
    #[serde(default)]
    pub scc_seed: Option<u64>,

    #[serde(default = "defaults::model")]
    pub model: ModelKind,
    #[serde(default = "defaults::mlp_hidden")]
    pub mlp_hidden: usize,

    pub rounds: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::eta0")]
    pub eta0: f64,
    /// First round run at the reduced rate; defaults to 75% of `rounds`.
    #[serde(default)]
    pub lr_drop_round: Option<usize>,
    #[serde(default = "defaults::lr_drop_factor")]
    pub lr_drop_factor: f64,
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::workers")]
    pub workers: usize,
    #[serde(default)]
    pub out_path: Option<PathBuf>,
}

mod defaults {
    use super::*;

    pub fn dataset() -> DatasetSource {
        DatasetSource::Blobs
    }
    pub fn blobs_classes() -> usize {
        10
    }
    pub fn blobs_per_class() -> usize {
        200
    }
    pub fn blobs_features() -> usize {
        20
    }
    pub fn blobs_noise() -> f64 {
        0.5
    }
    pub fn blobs_test_per_class() -> usize {
        100
    }
    pub fn partition() -> PartitionKind {
        PartitionKind::Iid
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn beta() -> f64 {
        0.9
    }
    pub fn attack() -> AttackKind {
        AttackKind::None
    }
    pub fn rop_lambda() -> f64 {
        0.9
    }
    pub fn rop_angle_deg() -> f64 {
        90.0
    }
    pub fn ipm_epsilon() -> f64 {
        0.2
    }
    pub fn aggregator() -> AggregatorKind {
        AggregatorKind::Mean
    }
    pub fn cc_iters() -> usize {
        1
    }
    pub fn rfa_max_iters() -> usize {
        100
    }
    pub fn rfa_tol() -> f64 {
        1e-8
    }
    pub fn scc_clusters() -> usize {
        3
    }
    pub fn model() -> ModelKind {
        ModelKind::Logreg
    }
    pub fn mlp_hidden() -> usize {
        32
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn eta0() -> f64 {
        0.1
    }
    pub fn lr_drop_factor() -> f64 {
        0.1
    }
    pub fn eval_every() -> usize {
        10
    }
    pub fn workers() -> usize {
        1
    }
}

impl ExperimentConfig {
    /// Defaults plus the three required keys.
    pub fn new(k: usize, k_m: usize, rounds: usize) -> Self {
        let doc = serde_json::json!({ "k": k, "k_m": k_m, "rounds": rounds });
        serde_json::from_value(doc).expect("defaults deserialize")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn attack_spec(&self) -> AttackSpec {
        AttackSpec {
            kind: self.attack,
            z: self.attack_z,
            lambda: self.rop_lambda,
            rho: self.rop_rho,
            angle_deg: self.rop_angle_deg,
            epsilon: self.ipm_epsilon,
            alternate_sign: self.alie_alternate,
        }
    }

    pub fn aggregator_spec(&self) -> AggregatorSpec {
        match self.aggregator {
            AggregatorKind::Mean => AggregatorSpec::Mean,
            AggregatorKind::Cc => AggregatorSpec::Cc {
                tau: self.cc_tau,
                iters: self.cc_iters,
            },
            AggregatorKind::Tm => AggregatorSpec::Tm { trim: self.tm_trim },
            AggregatorKind::Rfa => AggregatorSpec::Rfa {
                max_iters: self.rfa_max_iters,
                tol: self.rfa_tol,
            },
            AggregatorKind::Scc => AggregatorSpec::Scc {
                tau: self.cc_tau,
                clusters: self.scc_clusters,
                seed: self.scc_seed.unwrap_or_else(|| derive_seed(self.seed, tag::SCC)),
            },
        }
    }

    pub fn lr_drop_round(&self) -> usize {
        self.lr_drop_round
            .unwrap_or_else(|| ((self.rounds as f64) * 0.75).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return fail("k must be >= 1".into());
        }
        if self.k_m >= self.k {
            return fail(format!("k_m ({}) must be < k ({})", self.k_m, self.k));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return fail(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return fail(format!("eta0 must be > 0, got {}", self.eta0));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor.is_finite()) {
            return fail(format!("lr_drop_factor must be > 0, got {}", self.lr_drop_factor));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.workers == 0 {
            return fail("batch_size, eval_every and workers must be >= 1".into());
        }
        if self.dataset == DatasetSource::Idx
            && [&self.idx_train_images, &self.idx_train_labels, &self.idx_test_images, &self.idx_test_labels]
                .iter()
                .any(|p| p.is_none())
        {
            return fail("idx dataset needs idx_train_images, idx_train_labels, idx_test_images, idx_test_labels".into());
        }
        if self.partition == PartitionKind::Dirichlet && (self.dirichlet_alpha.is_nan() || self.dirichlet_alpha <= 0.0) {
            return fail(format!("dirichlet_alpha must be > 0, got {}", self.dirichlet_alpha));
        }
        if self.model == ModelKind::Mlp && self.mlp_hidden == 0 {
            return fail("mlp_hidden must be >= 1".into());
        }
        self.attack_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.aggregator_spec()
            .validate(self.k, self.k_m)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Step schedule: `eta0` before the drop round, `eta0 * factor` from it on.
pub fn lr_schedule(cfg: &ExperimentConfig, t: usize) -> f64 {
    if t >= cfg.lr_drop_round() {
        cfg.eta0 * cfg.lr_drop_factor
    } else {
        cfg.eta0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_is_named() {
        let err = ExperimentConfig::from_json_str(r#"{"k_m": 1, "rounds": 3}"#).unwrap_err();
        assert!(err.to_string().contains("`k`"), "{err}");
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        let err = ExperimentConfig::from_json_str(r#"{"k": 5, "k_m": 1, "rounds": 3, "tua": 1}"#).unwrap_err();
        assert!(err.to_string().contains("tua"), "{err}");
        let err = ExperimentConfig::from_json_str(r#"{"k": "five", "k_m": 1, "rounds": 3}"#).unwrap_err();
        assert!(err.to_string().contains("invalid type"), "{err}");
        let err = ExperimentConfig::from_json_str(r#"{"k": 5, "k_m": 1, "rounds": 3, "attack": "krum"}"#).unwrap_err();
        assert!(err.to_string().contains("krum"), "{err}");
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = ExperimentConfig::new(25, 5, 500);
        assert_eq!(cfg.lr_drop_round(), 375);
        assert_eq!(cfg.attack_spec(), AttackSpec::default());
        let back = ExperimentConfig::from_value(cfg.to_value()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn schedule_drops_once() {
        let mut cfg = ExperimentConfig::new(25, 5, 100);
        assert_eq!(lr_schedule(&cfg, 1), 0.1);
        assert_eq!(lr_schedule(&cfg, 74), 0.1);
        assert!((lr_schedule(&cfg, 75) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(&cfg, 100) - 0.01).abs() < 1e-15);
        cfg.lr_drop_factor = 1.0;
        assert_eq!(lr_schedule(&cfg, 90), 0.1);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ExperimentConfig::new(5, 5, 10);
        assert!(cfg.validate().is_err());
        cfg.k_m = 1;
        cfg.beta = 1.0;
        assert!(cfg.validate().is_err());
        cfg.beta = 0.5;
        cfg.aggregator = AggregatorKind::Tm;
        cfg.tm_trim = Some(3);
        assert!(cfg.validate().is_err());
        cfg.tm_trim = None;
        cfg.validate().unwrap();
        cfg.dataset = DatasetSource::Idx;
        assert!(cfg.validate().is_err());
    }
}
