use super::config::{CovarianceParam, HeadMode, ModelConfig};
use super::network::{fill_offsets, Offsets, Plan};
use super::ModelError;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Which part of the network a parameter block belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Body,
    /// Final linear readout weights of each layer (energy is linear in them).
    Readout,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// N(0, 1/fan_in)
    Normal { fan_in: usize },
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub group: ParamGroup,
    pub init: Init,
}

/// Named slices of the flat parameter vector. Depends on the config alone.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, name: impl Into<String>, len: usize, group: ParamGroup, init: Init) -> Range<usize> {
        let offset = self.total;
        self.entries.push(ParamEntry {
            name: name.into(),
            offset,
            len,
            group,
            init,
        });
        self.total += len;
        offset..offset + len
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.offset..e.offset + e.len)
    }

    /// Flat indices of every parameter in `group`.
    pub fn indices(&self, group: ParamGroup) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .flat_map(|e| e.offset..e.offset + e.len)
            .collect()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.total];
        for e in &self.entries {
            let dst = &mut out[e.offset..e.offset + e.len];
            match e.init {
                Init::Const(c) => dst.fill(c),
                Init::Normal { fan_in } => {
                    let sd = 1.0 / (fan_in.max(1) as f64).sqrt();
                    let n = Normal::new(0.0, sd).expect("positive sd");
                    for v in dst {
                        *v = n.sample(rng);
                    }
                }
            }
        }
        out
    }
}

/// Flat parameter vector of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn new(values: Vec<f64>) -> Self {
        ModelParams { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn build_layout(
    cfg: &ModelConfig,
    plan: &Plan,
) -> Result<(ParamLayout, Offsets), ModelError> {
    use Init::*;
    use ParamGroup::*;
    let ns = cfg.species_list.len();
    let m0 = cfg.scalar_mult();
    let f = cfg.feature_dim;
    let nb = cfg.n_basis;
    let mut lay = ParamLayout::default();
    lay.push("embed", ns * m0, Body, Normal { fan_in: 1 });
    lay.push("a1", m0 * m0, Body, Normal { fan_in: m0 });
    for (t, lp) in plan.layers.iter().enumerate() {
        let p = |s: &str| format!("L{}.{}", t + 1, s);
        push_linear(&mut lay, &p("lin1"), &lp.lin1);
        lay.push(p("mlp0"), nb * f, Body, Normal { fan_in: nb });
        lay.push(p("mlp1"), f * f, Body, Normal { fan_in: f });
        lay.push(p("mlp2"), f * lp.tp.weight_numel(), Body, Normal { fan_in: f });
        push_linear(&mut lay, &p("lin2"), &lp.lin2);
        for z in 0..ns {
            push_linear(&mut lay, &format!("L{}.si{}", t + 1, z), &lp.si);
        }
        lay.push(p("b"), m0, Body, Const(1.0));
        lay.push(p("ro1"), f * m0, Body, Normal { fan_in: m0 });
        lay.push(p("ro2"), f, Readout, Const(0.0));
        if t == 0 {
            // per-species energy offset, part of the first readout
            lay.push(p("ro0"), ns, Readout, Const(0.0));
        }
    }
    if cfg.head_mode != HeadMode::Base {
        lay.push("head.h", f * m0, Head, Normal { fan_in: m0 });
        lay.push("head.hb", f, Head, Const(0.0));
        lay.push("head.var", f, Head, Const(0.0));
        lay.push("head.varb", 1, Head, Const(0.0));
    }
    if cfg.head_mode == HeadMode::Mve8 {
        match cfg.cov_param {
            CovarianceParam::Equivariant => {
                lay.push("head.c0", f, Head, Const(0.0));
                lay.push("head.c0b", 1, Head, Const(1.0));
                let n = plan.x2_channels;
                lay.push("head.x2", n, Head, Normal { fan_in: n.max(1) });
            }
            CovarianceParam::Cholesky => {
                lay.push("head.chol", 6 * f, Head, Const(0.0));
                // softplus(ln(e − 1)) = 1: L starts at the identity
                lay.push("head.cholb_diag", 3, Head, Const((std::f64::consts::E - 1.0).ln()));
                lay.push("head.cholb_off", 3, Head, Const(0.0));
            }
        }
    }
    let off = fill_offsets(&lay, cfg);
    Ok((lay, off))
}

/// One entry per block, so each gets its own fan-in; returns the whole span.
fn push_linear(lay: &mut ParamLayout, name: &str, lin: &crate::tensor::EquivariantLinear) -> Range<usize> {
    let start = lay.total;
    for (k, (mi, mo, _)) in lin.blocks().enumerate() {
        lay.push(format!("{name}.{k}"), mi * mo, ParamGroup::Body, Init::Normal { fan_in: mi });
    }
    start..lay.total
}
