use super::TrainError;
use crate::geometry::AtomicStructure;
use crate::losses::LossError;
use crate::model::{ModelParams, RaceModel};
use crate::posterior::{predict_with, AggregatedPrediction, PosteriorApprox};
use crate::rngs::substream;
use crate::uq::{self, MetricRecord, ReliabilityCurve, ScatterData, UqError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// draws per prediction for sampling posteriors
    pub n_samples: usize,
    pub seed: u64,
    /// calibration levels
    pub levels: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_samples: 10,
            seed: 0,
            levels: uq::DEFAULT_LEVELS,
        }
    }
}

/// Labels, predicted means and predicted standard deviations of one output
/// channel. `pinned` marks a model without any uncertainty, whose sd is
/// set to 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelData {
    pub label: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub pinned: bool,
}

impl ChannelData {
    pub fn residuals(&self) -> Vec<f64> {
        self.label.iter().zip(&self.mean).map(|(y, m)| y - m).collect()
    }

    pub fn rmse(&self) -> Result<f64, UqError> {
        uq::rmse(&self.mean, &self.label)
    }

    pub fn mae(&self) -> f64 {
        self.residuals().iter().map(|r| r.abs()).sum::<f64>() / self.label.len().max(1) as f64
    }

    pub fn reliability(&self, m: usize) -> Result<ReliabilityCurve, UqError> {
        uq::reliability_curve(&self.residuals(), &self.sd, m)
    }

    pub fn scatter(&self) -> Result<ScatterData, UqError> {
        uq::error_scatter(&self.mean, &self.sd, &self.label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<MetricRecord>,
    /// one entry per structure
    pub energy: ChannelData,
    /// one entry per force component
    pub forces: ChannelData,
    /// σ_E of the in-distribution test structures and of the OOD set
    pub ood_scores: Option<(Vec<f64>, Vec<f64>)>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == name).map(|m| m.value)
    }
}

fn predictions(
    model: &RaceModel,
    draws: &[ModelParams],
    data: &[AtomicStructure],
) -> Result<Vec<AggregatedPrediction>, TrainError> {
    data.par_iter()
        .map(|s| Ok(predict_with(model, draws, s)?))
        .collect()
}

fn channels(
    data: &[AtomicStructure],
    preds: &[AggregatedPrediction],
    pinned: bool,
) -> Result<(ChannelData, ChannelData), TrainError> {
    let mut e = ChannelData {
        pinned,
        ..Default::default()
    };
    let mut f = e.clone();
    for (k, (s, p)) in data.iter().zip(preds).enumerate() {
        let (y, fy) = match (s.energy, &s.forces) {
            (Some(y), Some(fy)) => (y, fy),
            _ => return Err(LossError::MissingLabel(k).into()),
        };
        e.label.push(y);
        e.mean.push(p.energy.mean);
        e.sd.push(if pinned { 1.0 } else { p.energy_sd() });
        for ((yf, mf), sf) in fy.iter().zip(p.force_mean()).zip(p.force_sd()) {
            for c in 0..3 {
                f.label.push(yf[c]);
                f.mean.push(mf[c]);
                f.sd.push(if pinned { 1.0 } else { sf[c] });
            }
        }
    }
    Ok((e, f))
}

/// RMSE, MAE and (when the sds are usable) CE of both channels, and AUROC
/// of σ_E between `test` and `ood` when an OOD set is given. Sampling
/// posteriors are evaluated at `n_samples` draws shared by all structures.
pub fn evaluate(
    model: &RaceModel,
    posterior: &PosteriorApprox,
    test: &[AtomicStructure],
    ood: Option<&[AtomicStructure]>,
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    if test.is_empty() {
        return Err(TrainError::NoData);
    }
    let mut rng = substream(opts.seed, "predict");
    let draws = posterior.draw(opts.n_samples, &mut rng)?;
    let preds = predictions(model, &draws, test)?;
    let pinned = draws.len() == 1 && model.config().head_mode == crate::model::HeadMode::Base;
    let (energy, forces) = channels(test, &preds, pinned)?;

    let mut metrics = vec![
        MetricRecord::new("e_rmse", energy.rmse()?),
        MetricRecord::new("f_rmse", forces.rmse()?),
        MetricRecord::new("e_mae", energy.mae()),
        MetricRecord::new("f_mae", forces.mae()),
    ];
    let usable = |c: &ChannelData| c.sd.iter().all(|s| *s > 0.0) && c.label.len() >= 2;
    if usable(&energy) {
        metrics.push(MetricRecord::new(
            "e_ce",
            uq::calibration_error(&energy.residuals(), &energy.sd, opts.levels)?,
        ));
    }
    if usable(&forces) {
        metrics.push(MetricRecord::new(
            "f_ce",
            uq::calibration_error(&forces.residuals(), &forces.sd, opts.levels)?,
        ));
    }
    let ood_scores = match ood {
        Some(o) if !o.is_empty() && !pinned => {
            let op = predictions(model, &draws, o)?;
            let id: Vec<f64> = preds.iter().map(|p| p.energy_sd()).collect();
            let od: Vec<f64> = op.iter().map(|p| p.energy_sd()).collect();
            metrics.push(MetricRecord::new("auroc", uq::auroc(&id, &od)?));
            Some((id, od))
        }
        _ => None,
    };
    Ok(EvalReport {
        metrics,
        energy,
        forces,
        ood_scores,
    })
}

/// Moment-matched predictions for every structure, from `n_samples` draws
/// of the seed's `predict` substream shared across structures.
pub fn predict_dataset(
    model: &RaceModel,
    posterior: &PosteriorApprox,
    data: &[AtomicStructure],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<AggregatedPrediction>, TrainError> {
    let draws = posterior.draw(n_samples, &mut substream(seed, "predict"))?;
    predictions(model, &draws, data)
}

pub fn evaluate_params(
    model: &RaceModel,
    params: &ModelParams,
    test: &[AtomicStructure],
    ood: Option<&[AtomicStructure]>,
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    let post = PosteriorApprox::Point {
        params: params.clone(),
    };
    evaluate(model, &post, test, ood, opts)
}
