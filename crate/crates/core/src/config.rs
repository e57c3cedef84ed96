//! Run configuration: one JSON document with a section per subsystem.
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusConfig;
use crate::evaluator::{EvalOptions, SimConfig};
use crate::model::ModelConfig;
use crate::reasoner::DEFAULT_MAX_ATTEMPTS;
use crate::training::{GradCheckConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerConfig {
    /// Remote endpoint; the `REALAD_VLM_ENDPOINT` variable takes precedence.
    pub endpoint: Option<String>,
    pub max_attempts: u32,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gradcheck: GradCheckConfig,
    pub eval: EvalOptions,
    pub sim: SimConfig,
    pub reasoner: ReasonerConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| ConfigError::Json { path: shown, source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = ConfigError::Invalid;
        self.corpus.validate().map_err(|e| inv(e.to_string()))?;
        self.model.validate().map_err(|e| inv(format!("model: {e}")))?;
        self.train.validate().map_err(|e| inv(format!("train: {e}")))?;
        if self.model.horizon != self.corpus.horizon || self.model.k_agents != self.corpus.k_agents {
            return Err(inv("model and corpus disagree on horizon or k_agents".into()));
        }
        if self.reasoner.max_attempts == 0 {
            return Err(inv("reasoner.max_attempts must be at least 1".into()));
        }
        if !(self.gradcheck.eps > 0.0 && self.gradcheck.tolerance > 0.0) {
            return Err(inv("gradcheck eps and tolerance must be positive".into()));
        }
        if !(self.eval.ego_radius >= 0.0) || self.eval.batch_size == 0 {
            return Err(inv("eval.ego_radius must be non-negative and batch_size positive".into()));
        }
        Ok(())
    }
}
