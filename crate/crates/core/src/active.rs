//! BALD acquisition and budgeted pool selection.

use crate::geometry::AtomicStructure;
use crate::numeric::mat3::{self, Mat3};
use crate::posterior::{de_aggregate, de_aggregate_cov, AggregatedPrediction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActiveError {
    #[error("BALD needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("variance or covariance outside its domain: {0}")]
    DomainError(String),
    #[error("budget {k} exceeds pool size {pool}")]
    BudgetTooLarge { k: usize, pool: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    BaldE,
    BaldF,
    BaldEf,
}

impl Strategy {
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::BaldE => "bald_e",
            Strategy::BaldF => "bald_f",
            Strategy::BaldEf => "bald_ef",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Strategy::Random),
            "bald_e" => Ok(Strategy::BaldE),
            "bald_f" => Ok(Strategy::BaldF),
            "bald_ef" => Ok(Strategy::BaldEf),
            _ => Err(format!("unknown strategy `{s}` (random, bald_e, bald_f, bald_ef)")),
        }
    }
}

/// How per-atom force scores become one number per structure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceAggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub structure_id: usize,
    pub bald_energy: f64,
    pub bald_force: f64,
    pub selected_by: Option<Strategy>,
}

/// `½[ln σ_total² − (1/M) Σ ln σ_m²]` for M Gaussian members.
pub fn bald_energy(members: &[(f64, f64)]) -> Result<f64, ActiveError> {
    if members.len() < 2 {
        return Err(ActiveError::TooFewMembers(members.len()));
    }
    if let Some(m) = members.iter().find(|m| !(m.1 > 0.0) || !m.0.is_finite()) {
        return Err(ActiveError::DomainError(format!("member ({}, {})", m.0, m.1)));
    }
    if members.iter().all(|m| *m == members[0]) {
        return Ok(0.0);
    }
    let agg = de_aggregate(members).map_err(|e| ActiveError::DomainError(e.to_string()))?;
    let mean_log = members.iter().map(|m| m.1.ln()).sum::<f64>() / members.len() as f64;
    Ok(0.5 * (agg.total_var.ln() - mean_log))
}

fn log_det(s: &Mat3<f64>) -> Result<f64, ActiveError> {
    let sym = (0..3).all(|a| (0..3).all(|b| (s[a][b] - s[b][a]).abs() <= 1e-12 * (1.0 + s[a][b].abs())));
    let l = mat3::cholesky(s)
        .filter(|_| sym)
        .ok_or_else(|| ActiveError::DomainError(format!("covariance not positive definite: {s:?}")))?;
    Ok(2.0 * (l[0][0].ln() + l[1][1].ln() + l[2][2].ln()))
}

/// `½[ln det Σ_total − (1/M) Σ ln det Σ_m]` for one atom.
pub fn bald_force_atom(members: &[([f64; 3], Mat3<f64>)]) -> Result<f64, ActiveError> {
    if members.len() < 2 {
        return Err(ActiveError::TooFewMembers(members.len()));
    }
    let mut mean_log = 0.0;
    for (_, s) in members {
        mean_log += log_det(s)?;
    }
    mean_log /= members.len() as f64;
    if members.iter().all(|m| *m == members[0]) {
        return Ok(0.0);
    }
    let agg = de_aggregate_cov(members).map_err(|e| ActiveError::DomainError(e.to_string()))?;
    Ok(0.5 * (log_det(&agg.total)? - mean_log))
}

/// Per-structure force score from `per_member[m][i] = (μ, Σ)`.
pub fn bald_force(
    per_member: &[Vec<([f64; 3], Mat3<f64>)>],
    agg: ForceAggregation,
) -> Result<f64, ActiveError> {
    if per_member.len() < 2 {
        return Err(ActiveError::TooFewMembers(per_member.len()));
    }
    let n_atoms = per_member[0].len();
    if n_atoms == 0 || per_member.iter().any(|m| m.len() != n_atoms) {
        return Err(ActiveError::ShapeMismatch("members disagree on atom count".into()));
    }
    let mut scores = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        let atom: Vec<_> = per_member.iter().map(|m| m[i]).collect();
        scores.push(bald_force_atom(&atom)?);
    }
    Ok(match agg {
        ForceAggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ForceAggregation::Mean => scores.iter().sum::<f64>() / n_atoms as f64,
    })
}

/// Componentwise alternative: scalar BALD of each Cartesian component with
/// its marginal variance, summed per atom, then aggregated.
pub fn bald_force_componentwise(
    per_member: &[Vec<([f64; 3], Mat3<f64>)>],
    agg: ForceAggregation,
) -> Result<f64, ActiveError> {
    if per_member.len() < 2 {
        return Err(ActiveError::TooFewMembers(per_member.len()));
    }
    let n_atoms = per_member[0].len();
    let mut scores = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        let mut s = 0.0;
        for k in 0..3 {
            let comp: Vec<(f64, f64)> = per_member.iter().map(|m| (m[i].0[k], m[i].1[k][k])).collect();
            s += bald_energy(&comp)?;
        }
        scores.push(s);
    }
    Ok(match agg {
        ForceAggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ForceAggregation::Mean => scores.iter().sum::<f64>() / n_atoms.max(1) as f64,
    })
}

/// Both BALD scores of one structure from its member predictions.
pub fn score_prediction(pred: &AggregatedPrediction, agg: ForceAggregation) -> Result<(f64, f64), ActiveError> {
    let mut energy = Vec::with_capacity(pred.members.len());
    for (k, m) in pred.members.iter().enumerate() {
        let v = m
            .energy_var
            .ok_or_else(|| ActiveError::DomainError(format!("member {k} has no energy variance")))?;
        energy.push((m.energy_mean, v));
    }
    let mut forces = Vec::with_capacity(pred.members.len());
    for (k, m) in pred.members.iter().enumerate() {
        let cov = m
            .force_cov
            .as_ref()
            .ok_or_else(|| ActiveError::DomainError(format!("member {k} has no force covariance")))?;
        forces.push(m.force_mean.iter().copied().zip(cov.iter().copied()).collect::<Vec<_>>());
    }
    Ok((bald_energy(&energy)?, bald_force(&forces, agg)?))
}

/// Scores every pool structure in parallel; ids are pool indices.
pub fn score_pool(
    preds: &[AggregatedPrediction],
    agg: ForceAggregation,
) -> Result<Vec<AcquisitionRecord>, ActiveError> {
    preds
        .par_iter()
        .enumerate()
        .map(|(id, p)| {
            let (e, f) = score_prediction(p, agg)?;
            Ok(AcquisitionRecord {
                structure_id: id,
                bald_energy: e,
                bald_force: f,
                selected_by: None,
            })
        })
        .collect()
}

/// [`score_pool`], except that random selection, which needs no scores,
/// falls back to NaN scores when the predictions carry no usable variance.
pub fn pool_records(
    preds: &[AggregatedPrediction],
    agg: ForceAggregation,
    strategy: Strategy,
) -> Result<Vec<AcquisitionRecord>, ActiveError> {
    match score_pool(preds, agg) {
        Err(_) if strategy == Strategy::Random => Ok((0..preds.len())
            .map(|id| AcquisitionRecord {
                structure_id: id,
                bald_energy: f64::NAN,
                bald_force: f64::NAN,
                selected_by: None,
            })
            .collect()),
        r => r,
    }
}

fn ranked(records: &[AcquisitionRecord], key: fn(&AcquisitionRecord) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        key(&records[b])
            .total_cmp(&key(&records[a]))
            .then(records[a].structure_id.cmp(&records[b].structure_id))
    });
    idx
}

/// Picks `k` records; returns copies in selection order with `selected_by`
/// set. For BALD_EF the first ⌈k/2⌉ come from the energy ranking and are
/// tagged `BaldE`, the rest from the force ranking tagged `BaldF`.
pub fn select(
    records: &[AcquisitionRecord],
    strategy: Strategy,
    k: usize,
    seed: u64,
) -> Result<Vec<AcquisitionRecord>, ActiveError> {
    if k > records.len() {
        return Err(ActiveError::BudgetTooLarge {
            k,
            pool: records.len(),
        });
    }
    let pick = |i: usize, tag: Strategy| AcquisitionRecord {
        selected_by: Some(tag),
        ..records[i].clone()
    };
    Ok(match strategy {
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, records.len(), k)
                .into_iter()
                .map(|i| pick(i, Strategy::Random))
                .collect()
        }
        Strategy::BaldE => ranked(records, |r| r.bald_energy)
            .into_iter()
            .take(k)
            .map(|i| pick(i, Strategy::BaldE))
            .collect(),
        Strategy::BaldF => ranked(records, |r| r.bald_force)
            .into_iter()
            .take(k)
            .map(|i| pick(i, Strategy::BaldF))
            .collect(),
        Strategy::BaldEf => {
            let ke = k.div_ceil(2);
            let mut taken = vec![false; records.len()];
            let mut out = Vec::with_capacity(k);
            for i in ranked(records, |r| r.bald_energy).into_iter().take(ke) {
                taken[i] = true;
                out.push(pick(i, Strategy::BaldE));
            }
            for i in ranked(records, |r| r.bald_force) {
                if out.len() == k {
                    break;
                }
                if !taken[i] {
                    taken[i] = true;
                    out.push(pick(i, Strategy::BaldF));
                }
            }
            out
        }
    })
}

/// CSV with header `id,bald_e,bald_f,strategy`.
pub fn write_manifest<W: Write>(mut w: W, selected: &[AcquisitionRecord]) -> std::io::Result<()> {
    writeln!(w, "id,bald_e,bald_f,strategy")?;
    for r in selected {
        let tag = r.selected_by.map_or("", Strategy::tag);
        writeln!(w, "{},{},{},{}", r.structure_id, r.bald_energy, r.bald_force, tag)?;
    }
    Ok(())
}

/// Moves the pool entries with the given ids into the training set.
pub fn transfer(
    train: &[AtomicStructure],
    pool: &[AtomicStructure],
    ids: &[usize],
) -> Result<(Vec<AtomicStructure>, Vec<AtomicStructure>), ActiveError> {
    let mut chosen = vec![false; pool.len()];
    for &id in ids {
        if id >= pool.len() || chosen[id] {
            return Err(ActiveError::ShapeMismatch(format!("bad or repeated pool id {id}")));
        }
        chosen[id] = true;
    }
    let mut new_train = train.to_vec();
    new_train.extend(ids.iter().map(|&i| pool[i].clone()));
    let rest = pool
        .iter()
        .zip(&chosen)
        .filter(|(_, c)| !**c)
        .map(|(s, _)| s.clone())
        .collect();
    Ok((new_train, rest))
}

pub struct AlRoundOutcome<M> {
    pub train: Vec<AtomicStructure>,
    pub pool: Vec<AtomicStructure>,
    pub selected: Vec<AcquisitionRecord>,
    /// `None` when the budget is zero and retraining is skipped.
    pub retrained: Option<M>,
}

/// One acquisition round: score the pool from the current posterior's
/// member predictions, select, move the picks to the training set and
/// retrain on the augmented set.
#[allow(clippy::too_many_arguments)]
pub fn al_round<M, E>(
    train: &[AtomicStructure],
    pool: &[AtomicStructure],
    pool_predictions: &[AggregatedPrediction],
    budget: usize,
    strategy: Strategy,
    seed: u64,
    agg: ForceAggregation,
    retrain: impl FnOnce(&[AtomicStructure]) -> Result<M, E>,
) -> Result<AlRoundOutcome<M>, E>
where
    E: From<ActiveError>,
{
    if pool_predictions.len() != pool.len() {
        return Err(ActiveError::ShapeMismatch("one prediction per pool structure".into()).into());
    }
    if budget == 0 {
        return Ok(AlRoundOutcome {
            train: train.to_vec(),
            pool: pool.to_vec(),
            selected: Vec::new(),
            retrained: None,
        });
    }
    let records = pool_records(pool_predictions, agg, strategy)?;
    let selected = select(&records, strategy, budget, seed)?;
    let ids: Vec<usize> = selected.iter().map(|r| r.structure_id).collect();
    let (new_train, rest) = transfer(train, pool, &ids)?;
    let model = retrain(&new_train)?;
    Ok(AlRoundOutcome {
        train: new_train,
        pool: rest,
        selected,
        retrained: Some(model),
    })
}
