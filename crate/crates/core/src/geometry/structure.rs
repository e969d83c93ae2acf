use super::GeometryError;
use crate::numeric::mat3::{self, Mat3};

/// One configuration. Lengths in Å, energies in eV, forces in eV/Å.
///
/// `cell` rows are the lattice vectors a, b, c.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicStructure {
    pub positions: Vec<[f64; 3]>,
    pub species: Vec<u32>,
    pub cell: Option<Mat3<f64>>,
    pub pbc: [bool; 3],
    pub energy: Option<f64>,
    pub forces: Option<Vec<[f64; 3]>>,
}

impl AtomicStructure {
    /// Isolated cluster without labels.
    pub fn molecule(positions: Vec<[f64; 3]>, species: Vec<u32>) -> Result<Self, GeometryError> {
        let s = AtomicStructure {
            positions,
            species,
            cell: None,
            pbc: [false; 3],
            energy: None,
            forces: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// Fully periodic structure without labels.
    pub fn periodic(
        positions: Vec<[f64; 3]>,
        species: Vec<u32>,
        cell: Mat3<f64>,
    ) -> Result<Self, GeometryError> {
        let s = AtomicStructure {
            positions,
            species,
            cell: Some(cell),
            pbc: [true; 3],
            energy: None,
            forces: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_labels(mut self, energy: Option<f64>, forces: Option<Vec<[f64; 3]>>) -> Self {
        self.energy = energy;
        self.forces = forces;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.positions.len();
        if n == 0 {
            return Err(GeometryError::Empty);
        }
        if self.species.len() != n {
            return Err(GeometryError::ShapeMismatch(format!(
                "{} positions but {} species",
                n,
                self.species.len()
            )));
        }
        if let Some(f) = &self.forces {
            if f.len() != n {
                return Err(GeometryError::ShapeMismatch(format!(
                    "{} positions but {} force rows",
                    n,
                    f.len()
                )));
            }
        }
        if self.is_periodic() {
            match &self.cell {
                None => return Err(GeometryError::BadCell(0.0)),
                Some(h) => {
                    let d = mat3::det(h);
                    if !(d.abs() > 1e-10) {
                        return Err(GeometryError::BadCell(d));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn is_periodic(&self) -> bool {
        self.pbc.iter().any(|&p| p)
    }

    pub fn volume(&self) -> Option<f64> {
        self.cell.as_ref().map(|h| mat3::det(h).abs())
    }

    pub fn has_labels(&self) -> bool {
        self.energy.is_some() && self.forces.is_some()
    }

    /// Rigid motion `r ↦ R r + t`; the cell rows are rotated too.
    pub fn transformed(&self, r: &Mat3<f64>, t: [f64; 3]) -> Self {
        let mut s = self.clone();
        for p in &mut s.positions {
            let q = mat3::mul_vec(r, p);
            *p = [q[0] + t[0], q[1] + t[1], q[2] + t[2]];
        }
        if let Some(h) = &mut s.cell {
            for row in h.iter_mut() {
                *row = mat3::mul_vec(r, row);
            }
        }
        if let Some(f) = &mut s.forces {
            for v in f.iter_mut() {
                *v = mat3::mul_vec(r, v);
            }
        }
        s
    }

    /// Reorders atoms: atom `k` of the result is atom `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut s = self.clone();
        s.positions = perm.iter().map(|&k| self.positions[k]).collect();
        s.species = perm.iter().map(|&k| self.species[k]).collect();
        if let Some(f) = &self.forces {
            s.forces = Some(perm.iter().map(|&k| f[k]).collect());
        }
        s
    }
}
