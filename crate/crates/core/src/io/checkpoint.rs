//! Binary checkpoints: `BAMR`, u32 LE format version, u64 LE header length,
//! a UTF-8 JSON header, then little-endian f64 arrays. Header offsets are
//! bytes from the start of the payload.

use crate::model::{ModelConfig, ModelParams, RaceModel};
use crate::posterior::{IvonHyper, IvonState, LaplaceState, PosteriorApprox, SwagState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::VecDeque;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"BAMR";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    IncompatibleCheckpoint { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::CorruptCheckpoint(msg.into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub offset: u64,
    pub shape: Vec<u64>,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    pub posterior: String,
    pub arrays: Vec<ArrayEntry>,
    pub meta: Value,
}

/// A model configuration and the parameters or posterior trained for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub posterior: PosteriorApprox,
}

fn arrays_of(p: &PosteriorApprox) -> (Vec<(String, &[f64])>, Value) {
    match p {
        PosteriorApprox::Point { params } => (vec![("params".into(), &params.values[..])], json!({})),
        PosteriorApprox::Ensemble { members } => (
            members
                .iter()
                .enumerate()
                .map(|(k, m)| (format!("member.{k}"), &m.values[..]))
                .collect(),
            json!({ "members": members.len() }),
        ),
        PosteriorApprox::Swag { state } => {
            let mut a = vec![
                ("swag.mean".to_string(), &state.mean[..]),
                ("swag.sq_mean".to_string(), &state.sq_mean[..]),
            ];
            for (k, d) in state.devs.iter().enumerate() {
                a.push((format!("swag.dev.{k}"), &d[..]));
            }
            let meta = json!({
                "n_collected": state.n_collected,
                "max_rank": state.max_rank,
                "n_devs": state.devs.len(),
            });
            (a, meta)
        }
        PosteriorApprox::Ivon { state } => (
            vec![
                ("ivon.m".into(), &state.m[..]),
                ("ivon.h".into(), &state.h[..]),
                ("ivon.g".into(), &state.g[..]),
            ],
            json!({ "hyper": state.hyper, "t": state.t }),
        ),
        PosteriorApprox::Laplace { state } => (
            vec![
                ("laplace.theta_map".into(), &state.theta_map[..]),
                ("laplace.ggn_diag".into(), &state.ggn_diag[..]),
            ],
            json!({ "subset": state.subset, "prior_precision": state.prior_precision }),
        ),
    }
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let (arrays, meta) = arrays_of(&self.posterior);
        let mut offset = 0u64;
        let entries = arrays
            .iter()
            .map(|(name, a)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    offset,
                    shape: vec![a.len() as u64],
                    dtype: "f64".into(),
                };
                offset += 8 * a.len() as u64;
                e
            })
            .collect();
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            model: self.model.clone(),
            posterior: self.posterior.kind().into(),
            arrays: entries,
            meta,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let (arrays, _) = arrays_of(&self.posterior);
        let payload: usize = arrays.iter().map(|(_, a)| 8 * a.len()).sum();
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, a) in arrays {
            for x in a {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let (header, payload) = split_header(bytes)?;
        let mut arrays = std::collections::HashMap::new();
        for e in &header.arrays {
            if e.dtype != "f64" {
                return Err(corrupt(format!("array {} has dtype {}", e.name, e.dtype)));
            }
            arrays.insert(e.name.as_str(), read_array(e, payload)?);
        }
        let mut take = |name: &str| {
            arrays
                .remove(name)
                .ok_or_else(|| corrupt(format!("missing array {name}")))
        };
        let model = RaceModel::new(header.model.clone())
            .map_err(|e| corrupt(format!("model config: {e}")))?;
        let p = model.n_params();
        let sized = |name: &str, v: Vec<f64>, n: usize| {
            if v.len() == n {
                Ok(v)
            } else {
                Err(corrupt(format!("array {name} has {} values, expected {n}", v.len())))
            }
        };
        let meta = |key: &str| {
            header
                .meta
                .get(key)
                .cloned()
                .ok_or_else(|| corrupt(format!("meta lacks {key}")))
        };
        let from_meta = |key: &str| -> Result<usize, CheckpointError> {
            serde_json::from_value(meta(key)?).map_err(|e| corrupt(format!("meta {key}: {e}")))
        };

        let posterior = match header.posterior.as_str() {
            "point" => PosteriorApprox::Point {
                params: ModelParams::new(sized("params", take("params")?, p)?),
            },
            "ensemble" => {
                let m = from_meta("members")?;
                let members = (0..m)
                    .map(|k| {
                        let name = format!("member.{k}");
                        Ok(ModelParams::new(sized(&name, take(&name)?, p)?))
                    })
                    .collect::<Result<_, CheckpointError>>()?;
                PosteriorApprox::Ensemble { members }
            }
            "swag" => {
                let n_devs = from_meta("n_devs")?;
                let devs = (0..n_devs)
                    .map(|k| {
                        let name = format!("swag.dev.{k}");
                        sized(&name, take(&name)?, p)
                    })
                    .collect::<Result<VecDeque<_>, _>>()?;
                PosteriorApprox::Swag {
                    state: SwagState {
                        mean: sized("swag.mean", take("swag.mean")?, p)?,
                        sq_mean: sized("swag.sq_mean", take("swag.sq_mean")?, p)?,
                        devs,
                        n_collected: from_meta("n_collected")?,
                        max_rank: from_meta("max_rank")?,
                    },
                }
            }
            "ivon" => {
                let hyper: IvonHyper =
                    serde_json::from_value(meta("hyper")?).map_err(|e| corrupt(format!("meta hyper: {e}")))?;
                let t: u64 = serde_json::from_value(meta("t")?).map_err(|e| corrupt(format!("meta t: {e}")))?;
                PosteriorApprox::Ivon {
                    state: IvonState {
                        m: sized("ivon.m", take("ivon.m")?, p)?,
                        h: sized("ivon.h", take("ivon.h")?, p)?,
                        g: sized("ivon.g", take("ivon.g")?, p)?,
                        hyper,
                        t,
                    },
                }
            }
            "laplace" => {
                let subset: Vec<usize> =
                    serde_json::from_value(meta("subset")?).map_err(|e| corrupt(format!("meta subset: {e}")))?;
                if subset.iter().any(|&i| i >= p) {
                    return Err(corrupt("laplace subset index out of range"));
                }
                let prior_precision: f64 = serde_json::from_value(meta("prior_precision")?)
                    .map_err(|e| corrupt(format!("meta prior_precision: {e}")))?;
                let n = subset.len();
                PosteriorApprox::Laplace {
                    state: LaplaceState {
                        theta_map: sized("laplace.theta_map", take("laplace.theta_map")?, p)?,
                        ggn_diag: sized("laplace.ggn_diag", take("laplace.ggn_diag")?, n)?,
                        subset,
                        prior_precision,
                    },
                }
            }
            k => return Err(corrupt(format!("unknown posterior kind {k}"))),
        };
        if let Some(extra) = arrays.keys().next() {
            return Err(corrupt(format!("unexpected array {extra}")));
        }
        Ok(Checkpoint {
            model: header.model,
            posterior,
        })
    }
}

/// Validates the preamble and returns the parsed header and the payload.
pub fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), CheckpointError> {
    if bytes.len() < PREAMBLE {
        return Err(corrupt(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::IncompatibleCheckpoint {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = (bytes.len() - PREAMBLE) as u64;
    if hlen > rest {
        return Err(corrupt(format!("header length {hlen} exceeds the {rest} bytes present")));
    }
    let hend = PREAMBLE + hlen as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[PREAMBLE..hend]).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::IncompatibleCheckpoint {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok((header, &bytes[hend..]))
}

fn read_array(e: &ArrayEntry, payload: &[u8]) -> Result<Vec<f64>, CheckpointError> {
    let numel = e
        .shape
        .iter()
        .try_fold(1u64, |a, &d| a.checked_mul(d))
        .ok_or_else(|| corrupt(format!("array {} shape overflows", e.name)))?;
    let end = numel
        .checked_mul(8)
        .and_then(|b| b.checked_add(e.offset))
        .ok_or_else(|| corrupt(format!("array {} extent overflows", e.name)))?;
    if end > payload.len() as u64 {
        return Err(corrupt(format!(
            "array {} ends at byte {end} of a {}-byte payload",
            e.name,
            payload.len()
        )));
    }
    let bytes = &payload[e.offset as usize..end as usize];
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), super::IoError> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| super::IoError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, super::IoError> {
    let bytes = std::fs::read(path).map_err(|e| super::IoError::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader, super::IoError> {
    let bytes = std::fs::read(path).map_err(|e| super::IoError::io(path, e))?;
    Ok(split_header(&bytes)?.0)
}
