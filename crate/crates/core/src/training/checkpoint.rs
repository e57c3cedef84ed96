use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::jsonfmt;
use crate::model::ModelConfig;
use crate::nn::{GroupedParams, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Trained parameters plus everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: CheckpointConfig,
    pub params: GroupedParams,
    pub rng_seed: u64,
}

impl Checkpoint {
    pub fn new(model: &ModelConfig, train: &TrainConfig, params: &ParamStore) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: CheckpointConfig {
                model: model.clone(),
                train: train.clone(),
            },
            params: params.to_grouped(),
            rng_seed: train.seed,
        }
    }

    pub fn param_store(&self) -> Result<ParamStore, TrainError> {
        ParamStore::from_grouped(&self.params).map_err(TrainError::Checkpoint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let mut out = BufWriter::new(File::create(path)?);
        jsonfmt::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}
