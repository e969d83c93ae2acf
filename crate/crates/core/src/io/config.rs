use super::extxyz::ExtxyzOptions;
use super::IoError;
use crate::model::ModelConfig;
use crate::train::{EvalOptions, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Everything a run needs besides its input files. Unknown keys are
/// rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// `eval.seed` is ignored; draws come from `seed`
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub extxyz: ExtxyzOptions,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), IoError> {
        crate::model::RaceModel::new(self.model.clone()).map_err(|e| IoError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| IoError::Config(e.to_string()))?;
        self.train
            .check_model(&self.model)
            .map_err(|e| IoError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            IoError::Config(m) => IoError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}
