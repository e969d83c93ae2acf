//! Atomic structures, periodic neighbor lists, edge vectors and the radial
//! Bessel basis.

mod neighbors;
mod radial;
mod structure;

pub use neighbors::{build_neighbor_list, edge_geometry, edge_vectors, Edge, NeighborList};
pub use radial::{bessel_basis, bessel_basis_derivative, bessel_values, envelope};
pub use structure::AtomicStructure;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("structure has no atoms")]
    Empty,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cell is missing or singular (|det h| = {0:e})")]
    BadCell(f64),
    #[error("radius {0} outside the basis domain")]
    DomainError(f64),
    #[error("atoms {0} and {1} coincide")]
    DegenerateEdge(usize, usize),
    #[error("cutoff must be positive, got {0}")]
    BadCutoff(f64),
}
