use super::ModelError;
use crate::tensor::{Irrep, IrrepsSpec, Parity, L_MAX};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Energy only.
    Base,
    /// Energy mean and variance.
    Mve2,
    /// Energy mean and variance plus a 3×3 force covariance per atom.
    Mve8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceActivation {
    Softplus,
    Exp,
}

/// How the six covariance channels of the 8-head module are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceParam {
    /// One invariant channel `c₀` and one `l = 2` channel `x` (5 components):
    /// `A = c₀·I + T(x)`, `Σ = A Aᵀ + εI`. Rotates as `R Σ Rᵀ`.
    Equivariant,
    /// Six invariant channels in the lower-triangular layout
    /// `[[σ1,0,0],[σ6,σ2,0],[σ5,σ4,σ3]]`, diagonal through softplus.
    /// Invariant, not equivariant, under rotations.
    Cholesky,
}

fn default_floor() -> f64 {
    1e-6
}
fn default_jitter() -> f64 {
    1e-6
}
fn default_avg_neighbors() -> f64 {
    1.0
}
fn default_cov() -> CovarianceParam {
    CovarianceParam::Equivariant
}
fn default_activation() -> VarianceActivation {
    VarianceActivation::Softplus
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Å
    pub r_cut: f64,
    pub n_basis: usize,
    pub n_layers: usize,
    pub hidden_irreps: IrrepsSpec,
    /// Width of the radial MLP, the readout and the head hidden layer.
    pub feature_dim: usize,
    /// Degree of the edge harmonics.
    pub l_max: usize,
    pub species_list: Vec<u32>,
    pub head_mode: HeadMode,
    #[serde(default = "default_activation")]
    pub variance_activation: VarianceActivation,
    #[serde(default = "default_floor")]
    pub variance_floor: f64,
    #[serde(default = "default_jitter")]
    pub cov_jitter: f64,
    #[serde(default = "default_cov")]
    pub cov_param: CovarianceParam,
    #[serde(default)]
    pub max_neighbors: Option<usize>,
    /// Aggregated messages are divided by this.
    #[serde(default = "default_avg_neighbors")]
    pub avg_num_neighbors: f64,
}

impl ModelConfig {
    /// Small model used in tests and examples.
    pub fn small(species_list: Vec<u32>, head_mode: HeadMode) -> Self {
        ModelConfig {
            r_cut: 4.0,
            n_basis: 6,
            n_layers: 2,
            hidden_irreps: "8x0e+4x1o".parse().expect("valid"),
            feature_dim: 8,
            l_max: 1,
            species_list,
            head_mode,
            variance_activation: VarianceActivation::Softplus,
            variance_floor: 1e-6,
            cov_jitter: 1e-6,
            cov_param: CovarianceParam::Equivariant,
            max_neighbors: None,
            avg_num_neighbors: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.to_string()));
        if self.n_layers < 1 {
            return bad("n_layers must be at least 1");
        }
        if self.l_max > L_MAX || self.hidden_irreps.l_max() > L_MAX {
            return bad("degrees above 3 are not supported");
        }
        if !(self.variance_floor > 0.0) || !(self.cov_jitter > 0.0) {
            return bad("variance_floor and cov_jitter must be positive");
        }
        if !(self.r_cut > 0.0) || self.n_basis == 0 || self.feature_dim == 0 {
            return bad("r_cut, n_basis and feature_dim must be positive");
        }
        if !(self.avg_num_neighbors > 0.0) {
            return bad("avg_num_neighbors must be positive");
        }
        if self.scalar_mult() == 0 {
            return bad("hidden_irreps needs a 0e block");
        }
        if self.species_list.is_empty() {
            return bad("species_list is empty");
        }
        let mut s = self.species_list.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.species_list.len() {
            return bad("species_list has duplicates");
        }
        Ok(())
    }

    /// Multiplicity of the invariant block `0e` of the hidden features.
    pub fn scalar_mult(&self) -> usize {
        self.hidden_irreps.mult_of(Irrep::new(0, Parity::Even))
    }

    pub fn species_index(&self, z: u32) -> Result<usize, ModelError> {
        self.species_list
            .iter()
            .position(|&s| s == z)
            .ok_or(ModelError::UnknownSpecies(z))
    }
}
