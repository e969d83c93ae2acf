use super::objective::{prepare, Prepared};
use super::TrainError;
use crate::autodiff::{Tape, Var};
use crate::geometry::AtomicStructure;
use crate::model::{ModelError, ModelParams, ParamGroup, RaceModel};
use crate::numeric::mat3;
use crate::posterior::{laplace_fit, GgnTerm, LaplaceState};
use rayon::prelude::*;

fn inverse3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
    let inv = m.try_inverse()?;
    Some(std::array::from_fn(|i| std::array::from_fn(|j| inv[(i, j)])))
}

/// GGN term of one structure over the parameter `subset`. Outputs are the
/// energy followed by the 3N force components; the likelihood curvature is
/// `1/σ_E²` for the energy and `Σ_i⁻¹` per atom when the heads provide
/// them, unit otherwise.
fn structure_term(model: &RaceModel, theta: &[f64], subset: &[usize], p: &Prepared) -> Result<GgnTerm, TrainError> {
    let tape = Tape::try_start(true).map_err(ModelError::from)?;
    let mut th: Vec<Var> = theta.iter().map(|&v| Var::cst(v)).collect();
    let sub: Vec<Var> = subset.iter().map(|&i| tape.leaf(theta[i])).collect();
    for (&i, v) in subset.iter().zip(&sub) {
        th[i] = *v;
    }
    let pos: Vec<[Var; 3]> = p
        .s
        .positions
        .iter()
        .map(|r| [tape.leaf(r[0]), tape.leaf(r[1]), tape.leaf(r[2])])
        .collect();
    let cell = p.s.cell.map(|h| h.map(|row| row.map(Var::cst)));
    let out = model.evaluate(&th, &p.s.species, &pos, cell.as_ref(), &p.nl)?;
    let flat: Vec<Var> = pos.iter().flatten().copied().collect();
    let dedr = tape.grad_graph(&[out.energy], &flat).map_err(ModelError::from)?;

    let mut jac = Vec::with_capacity(1 + dedr.len());
    jac.push(tape.grad(&[out.energy], &sub).map_err(ModelError::from)?);
    for g in &dedr {
        let row = tape.grad(&[*g], &sub).map_err(ModelError::from)?;
        jac.push(row.into_iter().map(|x| -x).collect());
    }
    let e_prec = out.energy_var.map_or(1.0, |v| 1.0 / v.value());
    let mut blocks = vec![(0, vec![e_prec])];
    for i in 0..p.s.n_atoms() {
        let prec = match out.force_cov.get(i) {
            Some(c) => inverse3(&mat3::to_f64(c))
                .ok_or_else(|| ModelError::BadInput("singular force covariance".into()))?,
            None => mat3::identity(),
        };
        blocks.push((1 + 3 * i, prec.iter().flatten().copied().collect()));
    }
    Ok(GgnTerm { jac, blocks })
}

/// One GGN term per structure, over the given parameter indices.
pub fn laplace_terms(
    model: &RaceModel,
    params: &ModelParams,
    data: &[AtomicStructure],
    subset: &[usize],
) -> Result<Vec<GgnTerm>, TrainError> {
    let prep = prepare(model, data)?;
    prep.par_iter()
        .map(|p| structure_term(model, &params.values, subset, p))
        .collect()
}

pub(crate) fn fit_laplace_prepared(
    model: &RaceModel,
    map: &ModelParams,
    data: &[Prepared],
    prior_precision: f64,
) -> Result<LaplaceState, TrainError> {
    let subset = model.layout().indices(ParamGroup::Readout);
    let terms: Vec<GgnTerm> = data
        .par_iter()
        .map(|p| structure_term(model, &map.values, &subset, p))
        .collect::<Result<_, _>>()?;
    Ok(laplace_fit(map.values.clone(), subset, &terms, prior_precision)?)
}

/// Last-layer Laplace: diagonal GGN posterior over the readout weights,
/// all other parameters fixed at the MAP.
pub fn fit_laplace(
    model: &RaceModel,
    map: &ModelParams,
    data: &[AtomicStructure],
    prior_precision: f64,
) -> Result<LaplaceState, TrainError> {
    let prep = prepare(model, data)?;
    fit_laplace_prepared(model, map, &prep, prior_precision)
}
