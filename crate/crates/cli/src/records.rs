use crate::Channel;
use anyhow::{bail, Context, Result};
use bam_core::geometry::AtomicStructure;
use bam_core::posterior::AggregatedPrediction;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// One line of `bam predict` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: usize,
    pub energy: f64,
    pub energy_sd: f64,
    pub forces: Vec<[f64; 3]>,
    pub forces_sd: Vec<[f64; 3]>,
    pub label_energy: Option<f64>,
    pub label_forces: Option<Vec<[f64; 3]>>,
}

impl PredictionRecord {
    pub fn new(id: usize, s: &AtomicStructure, p: &AggregatedPrediction) -> Self {
        PredictionRecord {
            id,
            energy: p.energy.mean,
            energy_sd: p.energy_sd(),
            forces: p.force_mean(),
            forces_sd: p.force_sd(),
            label_energy: s.energy,
            label_forces: s.forces.clone(),
        }
    }
}

pub fn write_predictions<W: Write>(mut w: W, recs: &[PredictionRecord]) -> Result<()> {
    for r in recs {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), k + 1))?,
        );
    }
    if out.is_empty() {
        bail!("{} holds no predictions", path.display());
    }
    Ok(out)
}

/// Residuals (label − mean) and sds of one channel, forces flattened by
/// component.
pub fn channel_residuals(recs: &[PredictionRecord], ch: Channel) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = Vec::new();
    let mut sd = Vec::new();
    for rec in recs {
        match ch {
            Channel::Energy => {
                let Some(y) = rec.label_energy else {
                    bail!("prediction {} has no energy label", rec.id)
                };
                r.push(y - rec.energy);
                sd.push(rec.energy_sd);
            }
            Channel::Forces => {
                let Some(fy) = &rec.label_forces else {
                    bail!("prediction {} has no force labels", rec.id)
                };
                if fy.len() != rec.forces.len() {
                    bail!("prediction {} has mismatched force rows", rec.id);
                }
                for ((y, m), s) in fy.iter().zip(&rec.forces).zip(&rec.forces_sd) {
                    for c in 0..3 {
                        r.push(y[c] - m[c]);
                        sd.push(s[c]);
                    }
                }
            }
        }
    }
    Ok((r, sd))
}
