//! Datasets, splits, checkpoints and run configuration.

mod checkpoint;
mod config;
mod dataset;
pub mod elements;
mod extxyz;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, split_header, ArrayEntry, Checkpoint,
    CheckpointError, CheckpointHeader, FORMAT_VERSION, MAGIC,
};
pub use config::RunConfig;
pub use dataset::{
    read_extxyz, sha256_hex, split, split_indices, write_extxyz_file, Dataset, DatasetError, LabelKinds,
    Provenance, SplitError, SplitSpec,
};
pub use extxyz::{parse_extxyz, write_extxyz, ExtxyzOptions, ParseError};

use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
