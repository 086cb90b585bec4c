use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capacity::{Distribution, GridConfig, Pool, ScenarioParams};
use crate::data::synthetic::SyntheticConfig;
use crate::data::{Schema, ScorerConfig, TemporalSplit};
use crate::deferral::{Policy, DEFAULT_AUTO_DECLINE_RATE};
use crate::expertise::OutcomeModelConfig;
use crate::experts::TeamConfig;
use crate::{Error, Result};

/// Where the base dataset comes from: a delimited file or the synthetic generator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Resolved against the config file's directory.
    pub path: Option<PathBuf>,
    pub schema: Option<Schema>,
    pub synthetic: Option<SyntheticConfig>,
}

/// Capacity setting of the historical period that produces the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingRegime {
    pub batch_size: usize,
    pub deferral_rate: f64,
    pub absence_rate: f64,
    pub distribution: Distribution,
}

impl Default for TrainingRegime {
    fn default() -> Self {
        TrainingRegime {
            batch_size: 250,
            deferral_rate: 0.2,
            absence_rate: 0.0,
            distribution: Distribution::Homogeneous,
        }
    }
}

impl TrainingRegime {
    pub fn params(&self, seed: u64) -> ScenarioParams {
        ScenarioParams::new(
            Pool::All,
            self.batch_size,
            self.deferral_rate,
            self.distribution,
            self.absence_rate,
            seed,
        )
    }
}

/// Which outcome probabilities feed the greedy and linear loss matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Outcome model fitted on the training log.
    #[default]
    Learned,
    /// True flip probabilities of the generated team.
    Oracle,
}

fn default_target_fpr() -> f64 {
    0.05
}

fn default_auto_decline() -> f64 {
    DEFAULT_AUTO_DECLINE_RATE
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("defersim-out")
}

fn default_policies() -> Vec<Policy> {
    Policy::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub split: TemporalSplit,
    #[serde(default)]
    pub scorer: ScorerConfig,
    /// FPR target used to pick the operating threshold on classifier validation.
    #[serde(default = "default_target_fpr")]
    pub target_fpr: f64,
    /// Fixed FP cost; derived from the threshold as `t / (1 - t)` when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_auto_decline")]
    pub auto_decline_rate: f64,
    #[serde(default)]
    pub team: TeamConfig,
    #[serde(default)]
    pub training: TrainingRegime,
    #[serde(default)]
    pub outcome_model: OutcomeModelConfig,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_policies")]
    pub policies: Vec<Policy>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn invalid(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.data.path.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("data.path and data.synthetic are mutually exclusive".into())),
            (None, None) => return Err(Error::Config("data needs either path or synthetic".into())),
            (Some(_), None) => {
                let path = self.dataset_path().expect("path present");
                if !path.is_file() {
                    return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
                }
                if self.data.schema.is_none() {
                    return Err(Error::Config("data.path requires data.schema".into()));
                }
            }
            (None, Some(s)) => {
                if s.months == 0 || s.per_month == 0 {
                    return Err(Error::Config("synthetic data needs months >= 1 and per_month >= 1".into()));
                }
            }
        }
        self.split.validate().map_err(invalid)?;
        if !(self.target_fpr > 0.0 && self.target_fpr < 1.0) {
            return Err(Error::Config(format!("target_fpr {} outside (0, 1)", self.target_fpr)));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!("lambda {l} must be finite and >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.auto_decline_rate) {
            return Err(Error::Config(format!(
                "auto_decline_rate {} outside [0, 1)",
                self.auto_decline_rate
            )));
        }
        self.team.validate().map_err(invalid)?;
        self.training.params(0).validate().map_err(invalid)?;
        self.grid.validate().map_err(invalid)?;
        if self.policies.is_empty() {
            return Err(Error::Config("policies is empty".into()));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                return Err(Error::Config(format!("policy '{p}' listed twice")));
            }
        }
        let om = &self.outcome_model;
        if om.iterations == 0 || !(om.learning_rate > 0.0) || !(0.0..1.0).contains(&om.momentum) || !(om.l2 >= 0.0) {
            return Err(Error::Config("outcome_model needs iterations >= 1, learning_rate > 0, momentum in [0, 1), l2 >= 0".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the run-relevant fields and, for file
    /// inputs, the dataset bytes.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.data.path = None;
        let value = serde_json::to_value(&canonical)?;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&value)?);
        if let Some(path) = self.dataset_path() {
            h.update(b"\0dataset\0");
            h.update(std::fs::read(&path)?);
        }
        Ok(hex::encode(h.finalize()))
    }
}
