//! Equivariant feature algebra: irreps, real spherical harmonics,
//! Clebsch–Gordan couplings, tensor products, block-diagonal linear maps
//! and the gate nonlinearity.

mod cg;
mod gate;
mod harmonics;
mod irreps;
mod linear;
mod product;
mod wigner;

pub use cg::{build_cg_table, cg_block, complex_cg, CgTable};
pub use gate::gate;
pub use harmonics::{sh_values, spherical_harmonics, L_MAX};
pub use irreps::{EquivariantFeature, Irrep, IrrepEntry, IrrepsSpec, Parity};
pub use linear::{equivariant_linear, EquivariantLinear};
pub use product::{tensor_product, ChannelMode, TensorProduct, TpPath};
pub use wigner::{rotate_feature, wigner_d};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("direction is not a unit vector (norm {0})")]
    NonUnitVector(f64),
    #[error("degree {0} exceeds the supported maximum of 3")]
    UnsupportedDegree(usize),
    #[error("no coupling path produces {0}")]
    InvalidPath(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("invalid irreps: {0}")]
    InvalidIrreps(String),
}
