//! Optimization: AMSGrad with reduce-on-plateau and a weight EMA, plus the
//! ensemble, SWAG, IVON and Laplace schedules built on top of it.

mod eval;
mod fit;
mod laplace;
mod objective;
mod optim;

pub use eval::{evaluate, evaluate_params, predict_dataset, ChannelData, EvalOptions, EvalReport};
pub use fit::{train, train_point, EpochLog, TrainLog, TrainOutcome};
pub use laplace::{fit_laplace, laplace_terms};
pub use objective::{
    batch_loss_grad, dataset_loss, predict_prepared, prepare, structure_loss_grad, Prepared,
};
pub use optim::{Amsgrad, Ema, Plateau, PlateauConfig};

use crate::active::ActiveError;
use crate::losses::{LossError, LossKind, LossWeights};
use crate::model::{HeadMode, ModelConfig, ModelError};
use crate::posterior::{IvonHyper, PosteriorError};
use crate::uq::UqError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training diverged (non-finite loss or parameters) in epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("empty dataset")]
    NoData,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Uq(#[from] UqError),
    #[error(transparent)]
    Active(#[from] ActiveError),
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PosteriorConfig {
    Point,
    Ensemble {
        members: usize,
    },
    Swag {
        /// maximum number of stored deviations K
        rank: usize,
        /// collection starts after this fraction of the epochs
        start_fraction: f64,
        /// collect every this many epochs
        #[serde(default = "one")]
        collect_every: usize,
    },
    Ivon {
        #[serde(default)]
        hyper: IvonHyper,
    },
    /// Last-layer Laplace around the trained point estimate.
    Laplace {
        prior_precision: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub scheduler: PlateauConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub loss: LossKind,
    pub weights: LossWeights,
    pub posterior: PosteriorConfig,
    /// print a progress line to stderr every this many epochs (0: never)
    pub progress_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 0.01,
            scheduler: PlateauConfig::default(),
            batch_size: 5,
            epochs: 2000,
            ema_decay: 0.99,
            loss: LossKind::Mse,
            weights: LossWeights::default(),
            posterior: PosteriorConfig::Point,
            progress_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return bad("max_lr must be positive");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad("ema_decay must lie in (0, 1)");
        }
        let s = &self.scheduler;
        if s.patience == 0 || !(s.factor > 0.0 && s.factor < 1.0) || !(s.threshold >= 0.0) || !(s.min_lr >= 0.0) {
            return bad("scheduler needs patience >= 1, factor in (0, 1), threshold >= 0, min_lr >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        self.weights.validate()?;
        match &self.posterior {
            PosteriorConfig::Point => {}
            PosteriorConfig::Ensemble { members } => {
                if *members == 0 {
                    return bad("ensemble needs at least one member");
                }
            }
            PosteriorConfig::Swag {
                rank,
                start_fraction,
                collect_every,
            } => {
                if *rank < 2 || !(0.0..1.0).contains(start_fraction) || *collect_every == 0 {
                    return bad("swag needs rank >= 2, start_fraction in [0, 1), collect_every >= 1");
                }
            }
            PosteriorConfig::Ivon { hyper } => hyper.validate()?,
            PosteriorConfig::Laplace { prior_precision } => {
                if !(*prior_precision > 0.0) {
                    return bad("laplace prior_precision must be positive");
                }
            }
        }
        Ok(())
    }

    /// Checks that the model has the heads the loss needs.
    pub fn check_model(&self, m: &ModelConfig) -> Result<(), TrainError> {
        let ok = match self.loss {
            LossKind::Mse => true,
            LossKind::NllE => m.head_mode != HeadMode::Base,
            LossKind::NllJef => m.head_mode == HeadMode::Mve8,
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::BadConfig(format!(
                "loss {:?} needs variance heads the model ({:?}) lacks",
                self.loss, m.head_mode
            )))
        }
    }
}
