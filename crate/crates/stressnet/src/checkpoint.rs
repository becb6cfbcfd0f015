//! JSON checkpoint envelope for every model kind.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stressnet_core::eval::CvResult;
use stressnet_core::model::{FitConfig, Hyper, ModelKind, TrainedModel};
use stressnet_core::nn::TrainConfig;

use crate::io::{read_json, write_json, IoError};

pub const CHECKPOINT_FORMAT: &str = "stressnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model_kind: ModelKind,
    pub dataset: String,
    /// Master seed of the run; the split manifest must carry the same one.
    pub seed: u64,
    pub hyper: Hyper,
    /// Network settings used for the final fit, with the selected λ and the
    /// derived seed filled in. Absent for the baselines.
    pub train_config: Option<TrainConfig>,
    pub fit_config: FitConfig,
    pub cv: CvResult,
    pub model: TrainedModel,
    /// SHA-256 of the flattened parameters as little-endian f64 bytes.
    pub checksum: String,
}

pub fn parameter_checksum(model: &TrainedModel) -> String {
    let mut h = Sha256::new();
    for v in model.flat_parameters() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file")]
    Format(String),
    #[error("{0}: parameter checksum does not match")]
    Checksum(String),
}

impl Checkpoint {
    pub fn new(
        dataset: &str,
        seed: u64,
        train_config: Option<TrainConfig>,
        fit_config: FitConfig,
        cv: CvResult,
        model: TrainedModel,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model_kind: model.kind,
            dataset: dataset.into(),
            seed,
            hyper: model.hyper,
            train_config,
            fit_config,
            cv,
            checksum: parameter_checksum(&model),
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(write_json(path, self)?)
    }

    /// Reads and verifies format tag and checksum.
    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let c: Checkpoint = read_json(path)?;
        let name = path.display().to_string();
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION || c.model_kind != c.model.kind {
            return Err(CheckpointError::Format(name));
        }
        if parameter_checksum(&c.model) != c.checksum {
            return Err(CheckpointError::Checksum(name));
        }
        Ok(c)
    }
}
