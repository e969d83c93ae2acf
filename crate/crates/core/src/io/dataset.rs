use super::extxyz::{parse_extxyz, write_extxyz, ExtxyzOptions};
use super::IoError;
use crate::geometry::AtomicStructure;
use crate::rngs::substream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("{kind} labels present on {have} of {total} structures; mark the dataset as partially labelled to accept this")]
    InconsistentLabels {
        kind: &'static str,
        have: usize,
        total: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("split asks for {requested} structures but only {available} are available")]
    Oversubscribed { requested: usize, available: usize },
    #[error("invalid fractions {0:?}: each must be in [0, 1] and the sum at most 1")]
    BadFractions([f64; 3]),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: String,
    /// hex SHA-256 of the file contents
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelKinds {
    pub energy: bool,
    pub forces: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub structures: Vec<AtomicStructure>,
    pub provenance: Option<Provenance>,
    /// some structures lack a label kind that others carry
    pub partial_labels: bool,
}

impl Dataset {
    /// Checks that each label kind is present on all structures or on none,
    /// unless `allow_partial`.
    pub fn new(
        structures: Vec<AtomicStructure>,
        provenance: Option<Provenance>,
        allow_partial: bool,
    ) -> Result<Self, DatasetError> {
        if structures.is_empty() {
            return Err(DatasetError::Empty);
        }
        let total = structures.len();
        let ne = structures.iter().filter(|s| s.energy.is_some()).count();
        let nf = structures.iter().filter(|s| s.forces.is_some()).count();
        let mut partial = false;
        for (kind, have) in [("energy", ne), ("force", nf)] {
            if have != 0 && have != total {
                if !allow_partial {
                    return Err(DatasetError::InconsistentLabels { kind, have, total });
                }
                partial = true;
            }
        }
        Ok(Dataset {
            structures,
            provenance,
            partial_labels: partial,
        })
    }

    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }

    /// Label kinds carried by every structure.
    pub fn labels(&self) -> LabelKinds {
        LabelKinds {
            energy: self.structures.iter().all(|s| s.energy.is_some()),
            forces: self.structures.iter().all(|s| s.forces.is_some()),
        }
    }

    pub fn is_labelled(&self) -> bool {
        let l = self.labels();
        l.energy && l.forces
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_extxyz(path: &Path, opts: &ExtxyzOptions, allow_partial: bool) -> Result<Dataset, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))?;
    let frames = parse_extxyz(text, opts)?;
    let prov = Provenance {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    };
    Ok(Dataset::new(frames, Some(prov), allow_partial)?)
}

pub fn write_extxyz_file(path: &Path, frames: &[AtomicStructure], opts: &ExtxyzOptions) -> Result<(), IoError> {
    let f = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_extxyz(&mut w, frames, opts).map_err(|e| IoError::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| IoError::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// exact (train, val, test) sizes
    Counts([usize; 3]),
    /// floor of each fraction times the dataset size
    Fractions([f64; 3]),
}

impl SplitSpec {
    pub fn counts(&self, n: usize) -> Result<[usize; 3], SplitError> {
        let c = match *self {
            SplitSpec::Counts(c) => c,
            SplitSpec::Fractions(f) => {
                let ok = f.iter().all(|x| (0.0..=1.0).contains(x)) && f.iter().sum::<f64>() <= 1.0 + 1e-12;
                if !ok {
                    return Err(SplitError::BadFractions(f));
                }
                f.map(|x| ((x * n as f64) + 1e-9).floor() as usize)
            }
        };
        let requested = c.iter().sum();
        if requested > n {
            return Err(SplitError::Oversubscribed {
                requested,
                available: n,
            });
        }
        Ok(c)
    }
}

/// Shuffles `0..n` with the seed's `split` substream and cuts it into
/// contiguous (train, val, test) index runs.
pub fn split_indices(n: usize, spec: SplitSpec, seed: u64) -> Result<[Vec<usize>; 3], SplitError> {
    let [a, b, c] = spec.counts(n)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "split"));
    Ok([
        idx[..a].to_vec(),
        idx[a..a + b].to_vec(),
        idx[a + b..a + b + c].to_vec(),
    ])
}

pub fn split(
    structures: &[AtomicStructure],
    spec: SplitSpec,
    seed: u64,
) -> Result<[Vec<AtomicStructure>; 3], SplitError> {
    let parts = split_indices(structures.len(), spec, seed)?;
    Ok(parts.map(|p| p.iter().map(|&i| structures[i].clone()).collect()))
}
