//! Strict JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costs::{CostSpec, DivergenceConj, LikelihoodKind};
use crate::datagen::{Degradation, DegradationSpec, PriorSpec};
use crate::error::{Error, Result};
use crate::operators::{CorruptionOp, Interp};
use crate::trainer::TrainConfig;

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}

/// The cost block; the operator comes from `degradation.op`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    pub tau: f64,
    #[serde(default = "yes")]
    pub use_likelihood: bool,
    #[serde(default = "yes")]
    pub use_quadratic: bool,
    #[serde(default)]
    pub likelihood: LikelihoodKind,
    #[serde(default = "one")]
    pub quad_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interp: Option<Interp>,
}

impl CostBlock {
    pub fn build(&self, op: CorruptionOp) -> Result<CostSpec> {
        CostSpec::new(
            self.tau,
            self.use_likelihood,
            self.use_quadratic,
            self.likelihood,
            self.quad_weight,
            op,
            self.interp.clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Uot,
    Ot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    /// Mean `‖A(T(y)) − y‖²`.
    DataFidelity,
    /// Mean PSNR of `T(y)` against the clean signal behind `y` (range 2).
    Psnr,
    /// PSNR per noise level, for multi-level noise.
    PsnrPerLevel,
    /// Between `T#µ` and held-out target samples.
    SlicedWasserstein,
    /// Mean `‖T(y) − y‖²` (equal dims only).
    Displacement,
    /// Mean `c(y, T(y))`.
    TransportCost,
    /// Absolute error of the mapped majority-mode share against the target share.
    ModeError,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::DataFidelity => "data_fidelity",
            MetricName::Psnr => "psnr",
            MetricName::PsnrPerLevel => "psnr_per_level",
            MetricName::SlicedWasserstein => "sliced_wasserstein",
            MetricName::Displacement => "displacement",
            MetricName::TransportCost => "transport_cost",
            MetricName::ModeError => "mode_error",
        }
    }
}

fn default_eval() -> Vec<MetricName> {
    vec![
        MetricName::DataFidelity,
        MetricName::SlicedWasserstein,
        MetricName::TransportCost,
    ]
}
fn n_default() -> usize {
    4000
}
fn n_eval_default() -> usize {
    1000
}
fn sw_projections_default() -> usize {
    64
}
fn tau_factors_default() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    /// Size of the measurement pool `Y`.
    #[serde(default = "n_default")]
    pub n_source: usize,
    /// Size of the clean pool `X`.
    #[serde(default = "n_default")]
    pub n_target: usize,
    /// Held-out measurements (with their clean signals) for evaluation.
    #[serde(default = "n_eval_default")]
    pub n_eval: usize,
    /// Target majority:minority ratio for two-mode priors; the source stays 1:1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance_k: Option<usize>,
    /// Prior for the clean signals behind the measurements, when it differs
    /// from the target prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_prior: Option<PriorSpec>,
}

impl Default for DataBlock {
    fn default() -> Self {
        DataBlock {
            n_source: n_default(),
            n_target: n_default(),
            n_eval: n_eval_default(),
            imbalance_k: None,
            source_prior: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Multipliers applied to `cost.tau`.
    #[serde(default = "tau_factors_default")]
    pub tau_factors: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            tau_factors: tau_factors_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub prior: PriorSpec,
    pub degradation: DegradationSpec,
    pub cost: CostBlock,
    pub train: TrainConfig,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_eval")]
    pub eval: Vec<MetricName>,
    #[serde(default)]
    pub data: DataBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default = "sw_projections_default")]
    pub sw_projections: usize,
    #[serde(default = "yes")]
    pub save_checkpoints: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::Config {
            path: path.to_string(),
            message: match other {
                Error::InvalidArgument(m) => m,
                o => o.to_string(),
            },
        },
    })
}

fn cfg_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parse and validate; errors name the offending field as a dotted path.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            let message = e.into_inner().to_string();
            // a missing field is reported at its parent; name the field itself
            if let Some(field) = message
                .strip_prefix("missing field `")
                .and_then(|rest| rest.split('`').next())
            {
                path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
            }
            cfg_err(&path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file or a run manifest (which embeds its config).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| cfg_err(".", e.to_string()))?;
        let is_manifest = value
            .get("format")
            .and_then(|f| f.as_str())
            .is_some_and(|f| f.starts_with(MANIFEST_FORMAT_PREFIX));
        if is_manifest {
            let inner = value.get("config").ok_or_else(|| cfg_err("config", "manifest has no config"))?;
            return Self::from_json_str(&inner.to_string());
        }
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        at("prior", self.prior.validate())?;
        if let Some(p) = &self.data.source_prior {
            at("data.source_prior", p.validate())?;
        }
        let degradation = at("degradation", self.degradation())?;
        if !(self.cost.tau > 0.0 && self.cost.tau.is_finite()) {
            return Err(cfg_err("cost.tau", format!("must be positive, got {}", self.cost.tau)));
        }
        at("cost", self.cost.build(degradation.op.clone()))?;
        self.train.validate()?;
        match (self.variant, self.train.conj) {
            (Variant::Uot, DivergenceConj::Identity) => {
                return Err(cfg_err("train.conj", "variant uot needs the kl conjugate; use variant ot instead"))
            }
            _ => {}
        }
        let source_dim = self.data.source_prior.as_ref().unwrap_or(&self.prior).dim();
        if source_dim != degradation.op.in_dim() {
            return Err(cfg_err(
                "degradation.op",
                format!("operator expects inputs of dim {}, prior produces {source_dim}", degradation.op.in_dim()),
            ));
        }
        if self.prior.dim() != degradation.op.in_dim() {
            return Err(cfg_err(
                "prior",
                format!("target prior has dim {}, operator domain is {}", self.prior.dim(), degradation.op.in_dim()),
            ));
        }
        if self.data.n_source == 0 || self.data.n_target == 0 || self.data.n_eval == 0 {
            return Err(cfg_err("data", "n_source, n_target and n_eval must be >= 1"));
        }
        if let Some(k) = self.data.imbalance_k {
            if k == 0 {
                return Err(cfg_err("data.imbalance_k", "must be >= 1"));
            }
            if self.prior.components().map_or(true, |c| c.len() != 2) {
                return Err(cfg_err("data.imbalance_k", "needs a prior with exactly two modes"));
            }
            if self.data.source_prior.is_some() {
                return Err(cfg_err("data.source_prior", "cannot be combined with imbalance_k"));
            }
        }
        let equal_dims = degradation.op.in_dim() == degradation.op.out_dim();
        for m in &self.eval {
            match m {
                MetricName::Displacement if !equal_dims => {
                    return Err(cfg_err("eval", "displacement needs equal measurement and signal dims"))
                }
                MetricName::ModeError if self.prior.components().map_or(true, |c| c.len() != 2) => {
                    return Err(cfg_err("eval", "mode_error needs a two-mode prior"))
                }
                MetricName::PsnrPerLevel if degradation.noise.level_probabilities().is_none() => {
                    return Err(cfg_err("eval", "psnr_per_level needs multi_level noise"))
                }
                _ => {}
            }
        }
        if self.sw_projections == 0 {
            return Err(cfg_err("sw_projections", "must be >= 1"));
        }
        if self.sweep.tau_factors.is_empty() || self.sweep.tau_factors.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(cfg_err("sweep.tau_factors", "factors must be positive and nonempty"));
        }
        Ok(())
    }

    pub fn degradation(&self) -> Result<Degradation> {
        Degradation::from_spec(&self.degradation)
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        self.cost.build(self.degradation()?.op)
    }

    /// Training config with the conjugate implied by the variant.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.variant == Variant::Ot {
            t.conj = DivergenceConj::Identity;
        }
        t
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn sha256(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(compact.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Resolved output directory: explicit override, then the config, then `runs/<name>`.
    pub fn resolve_output_dir(&self, over: Option<&Path>) -> PathBuf {
        over.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| {
                let name = if self.name.is_empty() { "run" } else { &self.name };
                PathBuf::from("runs").join(name)
            })
    }
}

pub const MANIFEST_FORMAT_PREFIX: &str = "uot-lab-manifest/";
pub const MANIFEST_FORMAT: &str = "uot-lab-manifest/1";

/// Version tag recorded in manifests.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "prior": {"kind": "two_modes"},
        "degradation": {"op": {"kind": "identity", "dim": 2}},
        "cost": {"tau": 0.5},
        "train": {"iterations": 10}
    }"#;

    fn error_path(text: &str) -> String {
        match ExperimentConfig::from_json_str(text).unwrap_err() {
            Error::Config { path, .. } => path,
            e => panic!("expected config error, got {e}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(cfg.variant, Variant::Uot);
        assert_eq!(cfg.train.lr_potential, 5e-5);
        assert_eq!(cfg.train.lr_map, 1e-4);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.sweep.tau_factors, vec![0.25, 0.5, 1.0, 2.0, 4.0]);
        assert_eq!(cfg.degradation.noise, crate::datagen::NoiseSpec::Gaussian { sigma: 0.05 });
    }

    #[test]
    fn missing_tau_names_the_field() {
        let text = MINIMAL.replace(r#""tau": 0.5"#, r#""use_quadratic": true"#);
        assert_eq!(error_path(&text), "cost.tau");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("cost.tau"), "{err}");
    }

    #[test]
    fn unknown_and_invalid_fields_are_located() {
        assert_eq!(error_path(&MINIMAL.replace(r#""tau": 0.5"#, r#""tau": 0.5, "taux": 1"#)), "cost.taux");
        assert_eq!(error_path(&MINIMAL.replace(r#""tau": 0.5"#, r#""tau": -1"#)), "cost.tau");
        assert_eq!(error_path(&MINIMAL.replace(r#""iterations": 10"#, r#""iterations": 10, "batch_size": 0"#)), "train.batch_size");
        assert_eq!(error_path(&MINIMAL.replace(r#""dim": 2"#, r#""dim": 3"#)), "degradation.op");
        assert_eq!(error_path(&MINIMAL.replace(r#""iterations": 10"#, r#""iterations": 10, "conj": "identity""#)), "train.conj");
    }

    #[test]
    fn ot_variant_forces_identity_conjugate() {
        let text = MINIMAL.replace(r#""cost""#, r#""variant": "ot", "cost""#);
        let cfg = ExperimentConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg.train_config().conj, DivergenceConj::Identity);
        assert_eq!(ExperimentConfig::from_json_str(MINIMAL).unwrap().train_config().conj, DivergenceConj::Kl);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let b = a.clone().with_seed(5);
        assert_eq!(a.sha256(), a.clone().sha256());
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
        let back = ExperimentConfig::from_json_str(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }
}
