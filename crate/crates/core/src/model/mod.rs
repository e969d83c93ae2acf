//! The interaction potential: species embedding, stacked equivariant
//! interaction layers with a readout per layer, and mean–variance heads.

mod config;
mod heads;
mod network;
mod params;

pub use config::{CovarianceParam, HeadMode, ModelConfig, VarianceActivation};
pub use heads::{
    assemble_force_cov, energy_variance, equivariant_force_cov, l2_basis, per_atom_variance,
};
pub use network::{ForwardOutput, RaceModel};
pub use params::{Init, ModelParams, ParamEntry, ParamGroup, ParamLayout};

use crate::autodiff::{stress_of, AdError, Tape, Var};
use crate::geometry::{build_neighbor_list, AtomicStructure, GeometryError, NeighborList};
use crate::numeric::mat3::{self, Mat3};
use crate::tensor::TensorError;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("species {0} is not in the model's species list")]
    UnknownSpecies(u32),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("parameter vector has {got} entries, the model needs {expected}")]
    ParamMismatch { expected: usize, got: usize },
    #[error("structure has no cell")]
    NoCell,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Model output for one structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    /// eV
    pub energy_mean: f64,
    /// eV², MVE modes only
    pub energy_var: Option<f64>,
    /// eV/Å, `−∂E/∂r`
    pub force_mean: Vec<[f64; 3]>,
    /// (eV/Å)², per atom, MVE8 only
    pub force_cov: Option<Vec<Mat3<f64>>>,
}

impl RaceModel {
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        ModelParams::new(self.layout().init(rng))
    }

    pub fn neighbor_list(&self, s: &AtomicStructure) -> Result<NeighborList, ModelError> {
        Ok(build_neighbor_list(
            s,
            self.config().r_cut,
            self.config().max_neighbors,
        )?)
    }

    fn check_species(&self, s: &AtomicStructure) -> Result<(), ModelError> {
        for &z in &s.species {
            self.config().species_index(z)?;
        }
        Ok(())
    }

    /// Plain `f64` evaluation, no gradients.
    pub fn evaluate_f64(
        &self,
        s: &AtomicStructure,
        params: &ModelParams,
    ) -> Result<ForwardOutput<f64>, ModelError> {
        self.check_species(s)?;
        let nl = self.neighbor_list(s)?;
        self.evaluate(&params.values, &s.species, &s.positions, s.cell.as_ref(), &nl)
    }

    pub fn energy(&self, s: &AtomicStructure, params: &ModelParams) -> Result<f64, ModelError> {
        Ok(self.evaluate_f64(s, params)?.energy)
    }

    /// Energy, forces and the head outputs.
    pub fn forward(
        &self,
        s: &AtomicStructure,
        params: &ModelParams,
    ) -> Result<PredictiveDistribution, ModelError> {
        self.check_species(s)?;
        let nl = self.neighbor_list(s)?;
        let tape = Tape::try_start(false)?;
        let theta: Vec<Var> = params.values.iter().map(|&v| Var::cst(v)).collect();
        let pos: Vec<[Var; 3]> = s
            .positions
            .iter()
            .map(|p| [tape.leaf(p[0]), tape.leaf(p[1]), tape.leaf(p[2])])
            .collect();
        let cell = s.cell.map(|h| h.map(|row| row.map(Var::cst)));
        let out = self.evaluate(&theta, &s.species, &pos, cell.as_ref(), &nl)?;
        let flat: Vec<Var> = pos.iter().flatten().copied().collect();
        let g = tape.grad(&[out.energy], &flat)?;
        Ok(PredictiveDistribution {
            energy_mean: out.energy.value(),
            energy_var: out.energy_var.map(Var::value),
            force_mean: g.chunks(3).map(|c| [-c[0], -c[1], -c[2]]).collect(),
            force_cov: if out.force_cov.is_empty() {
                None
            } else {
                Some(out.force_cov.iter().map(mat3::to_f64).collect())
            },
        })
    }

    /// Energy and stress (eV/Å³) of a periodic structure.
    pub fn stress(
        &self,
        s: &AtomicStructure,
        params: &ModelParams,
    ) -> Result<(f64, Mat3<f64>), ModelError> {
        let cell = s.cell.filter(|_| s.is_periodic()).ok_or(ModelError::NoCell)?;
        self.check_species(s)?;
        let nl = self.neighbor_list(s)?;
        stress_of(&s.positions, &cell, |pos, h| {
            let theta: Vec<Var> = params.values.iter().map(|&v| Var::cst(v)).collect();
            Ok::<_, ModelError>(self.evaluate(&theta, &s.species, pos, Some(h), &nl)?.energy)
        })
    }
}

/// One-shot evaluation: builds the model from `cfg` and runs it.
pub fn forward(
    s: &AtomicStructure,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<PredictiveDistribution, ModelError> {
    RaceModel::new(cfg.clone())?.forward(s, params)
}
