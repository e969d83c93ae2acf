use super::TrainError;
use crate::autodiff::{Tape, Var};
use crate::geometry::{AtomicStructure, NeighborList};
use crate::losses::{loss, LossKind, LossWeights, StructurePrediction};
use crate::model::RaceModel;
use rayon::prelude::*;

/// A structure with its neighbor list built once.
pub struct Prepared<'a> {
    pub s: &'a AtomicStructure,
    pub nl: NeighborList,
}

pub fn prepare<'a>(model: &RaceModel, data: &'a [AtomicStructure]) -> Result<Vec<Prepared<'a>>, TrainError> {
    data.par_iter()
        .map(|s| {
            for &z in &s.species {
                model.config().species_index(z)?;
            }
            Ok(Prepared {
                s,
                nl: model.neighbor_list(s)?,
            })
        })
        .collect()
}

/// Loss of one structure and its gradient with respect to all parameters.
/// Forces enter the loss as `−∂E/∂r` recorded on the tape, so the
/// parameter gradient runs through the force computation.
pub fn structure_loss_grad(
    model: &RaceModel,
    theta: &[f64],
    p: &Prepared,
    kind: LossKind,
    w: LossWeights,
) -> Result<(f64, Vec<f64>), TrainError> {
    let tape = Tape::try_start(true).map_err(crate::model::ModelError::from)?;
    let th = tape.leaves(theta);
    let pos: Vec<[Var; 3]> = p
        .s
        .positions
        .iter()
        .map(|r| [tape.leaf(r[0]), tape.leaf(r[1]), tape.leaf(r[2])])
        .collect();
    let cell = p.s.cell.map(|h| h.map(|row| row.map(Var::cst)));
    let out = model.evaluate(&th, &p.s.species, &pos, cell.as_ref(), &p.nl)?;
    let flat: Vec<Var> = pos.iter().flatten().copied().collect();
    let g = tape
        .grad_graph(&[out.energy], &flat)
        .map_err(crate::model::ModelError::from)?;
    let pred = StructurePrediction {
        energy: out.energy,
        energy_var: out.energy_var,
        forces: g.chunks(3).map(|c| [-c[0], -c[1], -c[2]]).collect(),
        force_cov: (!out.force_cov.is_empty()).then_some(out.force_cov),
    };
    let l = loss(kind, &[p.s], &[pred], w)?;
    let grad = tape.grad(&[l], &th).map_err(crate::model::ModelError::from)?;
    Ok((l.value(), grad))
}

/// Batch-mean loss and gradient. Structures run in parallel; the
/// reduction is sequential in batch order, so results do not depend on
/// the thread count.
pub fn batch_loss_grad(
    model: &RaceModel,
    theta: &[f64],
    batch: &[&Prepared],
    kind: LossKind,
    w: LossWeights,
) -> Result<(f64, Vec<f64>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::NoData);
    }
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|p| structure_loss_grad(model, theta, p, kind, w))
        .collect::<Result<_, _>>()?;
    let n = parts.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (l, g) in &parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    for a in &mut grad {
        *a /= n;
    }
    Ok((total / n, grad))
}

/// Prediction with plain-number outputs (forces from a first-order tape).
pub fn predict_prepared(
    model: &RaceModel,
    theta: &[f64],
    p: &Prepared,
) -> Result<StructurePrediction<f64>, TrainError> {
    let tape = Tape::try_start(false).map_err(crate::model::ModelError::from)?;
    let th: Vec<Var> = theta.iter().map(|&v| Var::cst(v)).collect();
    let pos: Vec<[Var; 3]> = p
        .s
        .positions
        .iter()
        .map(|r| [tape.leaf(r[0]), tape.leaf(r[1]), tape.leaf(r[2])])
        .collect();
    let cell = p.s.cell.map(|h| h.map(|row| row.map(Var::cst)));
    let out = model.evaluate(&th, &p.s.species, &pos, cell.as_ref(), &p.nl)?;
    let flat: Vec<Var> = pos.iter().flatten().copied().collect();
    let g = tape
        .grad(&[out.energy], &flat)
        .map_err(crate::model::ModelError::from)?;
    Ok(StructurePrediction {
        energy: out.energy.value(),
        energy_var: out.energy_var.map(|v| v.value()),
        forces: g.chunks(3).map(|c| [-c[0], -c[1], -c[2]]).collect(),
        force_cov: (!out.force_cov.is_empty())
            .then(|| out.force_cov.iter().map(crate::numeric::mat3::to_f64).collect()),
    })
}

/// Mean loss over a set, no gradients.
pub fn dataset_loss(
    model: &RaceModel,
    theta: &[f64],
    data: &[Prepared],
    kind: LossKind,
    w: LossWeights,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::NoData);
    }
    let terms: Vec<f64> = data
        .par_iter()
        .map(|p| {
            let pred = predict_prepared(model, theta, p)?;
            Ok(loss(kind, &[p.s], &[pred], w)?)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}
