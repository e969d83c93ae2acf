//! Posterior approximations over the parameter vector (deep ensembles,
//! SWAG, IVON, last-layer Laplace) and predictive aggregation by moment
//! matching.

mod aggregate;
mod ivon;
mod laplace;
mod swag;

pub use aggregate::{de_aggregate, de_aggregate_cov, Aggregate, CovAggregate};
pub use ivon::{IvonHyper, IvonState};
pub use laplace::{ggn_diagonal, laplace_fit, GgnTerm, LaplaceState};
pub use swag::SwagState;

use crate::geometry::AtomicStructure;
use crate::model::{ModelError, ModelParams, PredictiveDistribution, RaceModel};
use crate::numeric::mat3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PosteriorError {
    #[error("posterior not ready: {0}")]
    NotReady(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("no data")]
    NoData,
    #[error("non-finite gradient at step {0}")]
    DivergedGradient(u64),
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PosteriorApprox {
    /// A single trained model (MVE).
    Point { params: ModelParams },
    Ensemble { members: Vec<ModelParams> },
    Swag { state: SwagState },
    Ivon { state: IvonState },
    Laplace { state: LaplaceState },
}

impl PosteriorApprox {
    pub fn kind(&self) -> &'static str {
        match self {
            PosteriorApprox::Point { .. } => "point",
            PosteriorApprox::Ensemble { .. } => "ensemble",
            PosteriorApprox::Swag { .. } => "swag",
            PosteriorApprox::Ivon { .. } => "ivon",
            PosteriorApprox::Laplace { .. } => "laplace",
        }
    }

    /// Central parameters: the point estimate, SWA mean, IVON mean or MAP.
    /// For an ensemble, the first member.
    pub fn center(&self) -> ModelParams {
        match self {
            PosteriorApprox::Point { params } => params.clone(),
            PosteriorApprox::Ensemble { members } => members[0].clone(),
            PosteriorApprox::Swag { state } => ModelParams::new(state.mean.clone()),
            PosteriorApprox::Ivon { state } => ModelParams::new(state.m.clone()),
            PosteriorApprox::Laplace { state } => ModelParams::new(state.theta_map.clone()),
        }
    }

    /// Parameter sets to evaluate: every member of an ensemble, the point
    /// itself, or `n_samples` draws from a sampling posterior.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Vec<ModelParams>, PosteriorError> {
        let need = |n: usize| {
            if n < 2 {
                Err(PosteriorError::NotReady(format!("{n} samples requested, need at least 2")))
            } else {
                Ok(())
            }
        };
        Ok(match self {
            PosteriorApprox::Point { params } => vec![params.clone()],
            PosteriorApprox::Ensemble { members } => {
                if members.is_empty() {
                    return Err(PosteriorError::NotReady("empty ensemble".into()));
                }
                members.clone()
            }
            PosteriorApprox::Swag { state } => {
                need(n_samples)?;
                (0..n_samples)
                    .map(|_| state.sample(rng).map(ModelParams::new))
                    .collect::<Result<_, _>>()?
            }
            PosteriorApprox::Ivon { state } => {
                need(n_samples)?;
                (0..n_samples).map(|_| ModelParams::new(state.sample(rng))).collect()
            }
            PosteriorApprox::Laplace { state } => {
                need(n_samples)?;
                (0..n_samples).map(|_| ModelParams::new(state.sample(rng))).collect()
            }
        })
    }
}

/// Moment-matched prediction for one structure.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedPrediction {
    pub energy: Aggregate,
    /// per atom; member covariances count as aleatoric (zero when absent)
    pub forces: Vec<CovAggregate>,
    pub members: Vec<PredictiveDistribution>,
}

impl AggregatedPrediction {
    pub fn energy_sd(&self) -> f64 {
        self.energy.total_var.sqrt()
    }

    pub fn force_mean(&self) -> Vec<[f64; 3]> {
        self.forces.iter().map(|f| f.mean).collect()
    }

    /// Per-component force standard deviations.
    pub fn force_sd(&self) -> Vec<[f64; 3]> {
        self.forces
            .iter()
            .map(|f| std::array::from_fn(|k| f.total[k][k].max(0.0).sqrt()))
            .collect()
    }
}

pub fn aggregate_members(
    members: Vec<PredictiveDistribution>,
) -> Result<AggregatedPrediction, PosteriorError> {
    if members.is_empty() {
        return Err(PosteriorError::NoData);
    }
    let pairs: Vec<(f64, f64)> = members
        .iter()
        .map(|p| (p.energy_mean, p.energy_var.unwrap_or(0.0)))
        .collect();
    let energy = de_aggregate(&pairs)?;
    let n_atoms = members[0].force_mean.len();
    let mut forces = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        let per: Vec<_> = members
            .iter()
            .map(|p| {
                let cov = p
                    .force_cov
                    .as_ref()
                    .map_or_else(mat3::zeros::<f64>, |c| c[i]);
                (p.force_mean[i], cov)
            })
            .collect();
        forces.push(de_aggregate_cov(&per)?);
    }
    Ok(AggregatedPrediction {
        energy,
        forces,
        members,
    })
}

/// Evaluates the model at every drawn parameter set (in parallel, results
/// kept in draw order) and moment-matches the outputs.
pub fn posterior_predict<R: Rng + ?Sized>(
    model: &RaceModel,
    posterior: &PosteriorApprox,
    s: &AtomicStructure,
    n_samples: usize,
    rng: &mut R,
) -> Result<AggregatedPrediction, PosteriorError> {
    let draws = posterior.draw(n_samples, rng)?;
    predict_with(model, &draws, s)
}

/// Same as [`posterior_predict`] for parameter sets drawn beforehand.
pub fn predict_with(
    model: &RaceModel,
    draws: &[ModelParams],
    s: &AtomicStructure,
) -> Result<AggregatedPrediction, PosteriorError> {
    let members: Vec<PredictiveDistribution> = draws
        .par_iter()
        .map(|p| model.forward(s, p))
        .collect::<Result<_, _>>()?;
    aggregate_members(members)
}
