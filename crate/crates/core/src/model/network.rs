use super::config::{CovarianceParam, HeadMode, ModelConfig};
use super::heads::{assemble_force_cov, equivariant_force_cov, per_atom_variance};
use super::params::{build_layout, ParamLayout};
use super::ModelError;
use crate::geometry::{bessel_values, edge_geometry, NeighborList};
use crate::numeric::mat3::Mat3;
use crate::numeric::Scalar;
use crate::tensor::{
    cg_block, sh_values, EquivariantFeature, EquivariantLinear, Irrep, IrrepEntry, IrrepsSpec,
    Parity, TensorProduct,
};
use std::ops::Range;

pub(crate) struct LayerPlan {
    pub lin1: EquivariantLinear,
    pub tp: TensorProduct,
    pub lin2: EquivariantLinear,
    pub si: EquivariantLinear,
}

pub(crate) struct Plan {
    pub sh_spec: IrrepsSpec,
    pub a0_spec: IrrepsSpec,
    pub hidden: IrrepsSpec,
    pub layers: Vec<LayerPlan>,
    /// Blocks of the final node feature feeding the `l = 2` covariance
    /// channel: `(block, self-coupled)`.
    pub x2_sources: Vec<(usize, bool)>,
    pub x2_channels: usize,
}

impl Plan {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let m0 = cfg.scalar_mult();
        let hidden = cfg.hidden_irreps.clone();
        let a0_spec = IrrepsSpec::scalars(m0);
        let sh_spec = IrrepsSpec::spherical_harmonics(cfg.l_max);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for t in 0..cfg.n_layers {
            let input = if t == 0 { a0_spec.clone() } else { hidden.clone() };
            let tp = TensorProduct::new(&sh_spec, &input, |ir| hidden.find(ir).is_some())?;
            let lin2 = EquivariantLinear::new(tp.out_spec(), &hidden);
            layers.push(LayerPlan {
                lin1: EquivariantLinear::new(&input, &input),
                si: EquivariantLinear::new(&input, &hidden),
                tp,
                lin2,
            });
        }
        let mut x2_sources = Vec::new();
        let mut x2_channels = 0;
        for (k, e) in hidden.entries().iter().enumerate() {
            if e.ir.l >= 1 {
                x2_sources.push((k, true));
                x2_channels += e.mult;
            }
            if e.ir == Irrep::new(2, Parity::Even) {
                x2_sources.push((k, false));
                x2_channels += e.mult;
            }
        }
        Ok(Plan {
            sh_spec,
            a0_spec,
            hidden,
            layers,
            x2_sources,
            x2_channels,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct LayerOffsets {
    pub lin1: Range<usize>,
    pub mlp0: Range<usize>,
    pub mlp1: Range<usize>,
    pub mlp2: Range<usize>,
    pub lin2: Range<usize>,
    pub si: Vec<Range<usize>>,
    pub b: Range<usize>,
    pub ro1: Range<usize>,
    pub ro2: Range<usize>,
    pub ro0: Option<Range<usize>>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Offsets {
    pub embed: Range<usize>,
    pub a1: Range<usize>,
    pub layers: Vec<LayerOffsets>,
    pub head_h: Range<usize>,
    pub head_hb: Range<usize>,
    pub head_var: Range<usize>,
    pub head_varb: Range<usize>,
    pub head_c0: Range<usize>,
    pub head_c0b: Range<usize>,
    pub head_x2: Range<usize>,
    pub head_chol: Range<usize>,
    pub head_cholb: Range<usize>,
}

/// Everything one evaluation produces, in the scalar type it ran on.
#[derive(Clone, Debug)]
pub struct ForwardOutput<S> {
    /// `Σ_i Σ_t E_i^(t)`
    pub energy: S,
    /// `Σ_t E_i^(t)` per atom.
    pub atom_energies: Vec<S>,
    /// `E_i^(t)`, indexed `[t][i]`.
    pub layer_energies: Vec<Vec<S>>,
    /// Per-atom `σ_i² + ε_v` (MVE modes).
    pub atom_variances: Vec<S>,
    /// Sum of `atom_variances` (MVE modes).
    pub energy_var: Option<S>,
    /// Per-atom force covariance (MVE8).
    pub force_cov: Vec<Mat3<S>>,
}

/// The interaction network: embedding, stacked interaction layers with a
/// readout after each, and the optional uncertainty heads.
pub struct RaceModel {
    cfg: ModelConfig,
    plan: Plan,
    layout: ParamLayout,
    off: Offsets,
}

impl std::fmt::Debug for RaceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RaceModel")
            .field("cfg", &self.cfg)
            .field("n_params", &self.layout.total())
            .finish()
    }
}

fn dense<S: Scalar>(w: &[S], x: &[S], n_out: usize) -> Vec<S> {
    let n_in = x.len();
    (0..n_out)
        .map(|o| S::dot(&w[o * n_in..(o + 1) * n_in], x))
        .collect()
}

impl RaceModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let plan = Plan::new(&cfg)?;
        let (layout, off) = build_layout(&cfg, &plan)?;
        Ok(RaceModel {
            cfg,
            plan,
            layout,
            off,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.total()
    }

    pub fn hidden_irreps(&self) -> &IrrepsSpec {
        &self.plan.hidden
    }

    /// Output irreps of the edge tensor product of layer `t` (0-based).
    pub fn message_irreps(&self, t: usize) -> &IrrepsSpec {
        self.plan.layers[t].tp.out_spec()
    }

    /// Runs the network on `positions` (and `cell` for periodic edges) with
    /// parameters `theta`. Positions, cell and parameters can each be tape
    /// variables or constants.
    pub fn evaluate<S: Scalar>(
        &self,
        theta: &[S],
        species: &[u32],
        positions: &[[S; 3]],
        cell: Option<&Mat3<S>>,
        nl: &NeighborList,
    ) -> Result<ForwardOutput<S>, ModelError> {
        if theta.len() != self.layout.total() {
            return Err(ModelError::ParamMismatch {
                expected: self.layout.total(),
                got: theta.len(),
            });
        }
        if positions.len() != species.len() || species.is_empty() {
            return Err(ModelError::BadInput(format!(
                "{} positions for {} species",
                positions.len(),
                species.len()
            )));
        }
        let zi: Vec<usize> = species
            .iter()
            .map(|&z| self.cfg.species_index(z))
            .collect::<Result<_, _>>()?;
        let n = species.len();
        let cfg = &self.cfg;
        let off = &self.off;
        let m0 = cfg.scalar_mult();
        let fdim = cfg.feature_dim;
        let p = |r: &Range<usize>| &theta[r.clone()];

        // per-edge geometry, harmonics and radial features
        let geo = edge_geometry(positions, cell, nl)?;
        let mut ys = Vec::with_capacity(geo.len());
        let mut radial = Vec::with_capacity(geo.len());
        let mut buf = Vec::new();
        for (u, d) in &geo {
            buf.clear();
            sh_values(*u, cfg.l_max, &mut buf);
            ys.push(EquivariantFeature::from_vec(self.plan.sh_spec.clone(), buf.clone())?);
            let mut rb = Vec::with_capacity(cfg.n_basis);
            bessel_values(*d, cfg.n_basis, cfg.r_cut, &mut rb);
            radial.push(rb);
        }
        // edges are sorted by center
        let mut first = vec![0usize; n + 1];
        for e in &nl.edges {
            first[e.i + 1] += 1;
        }
        for i in 0..n {
            first[i + 1] += first[i];
        }

        let emb = p(&off.embed);
        let mut a: Vec<EquivariantFeature<S>> = zi
            .iter()
            .map(|&z| {
                EquivariantFeature::from_vec(
                    self.plan.a0_spec.clone(),
                    emb[z * m0..(z + 1) * m0].to_vec(),
                )
            })
            .collect::<Result<_, _>>()?;
        let a1: Vec<Vec<S>> = a.iter().map(|x| dense(p(&off.a1), x.as_slice(), m0)).collect();

        let inv_avg = S::cst(1.0 / cfg.avg_num_neighbors);
        let mut layer_energies = Vec::with_capacity(cfg.n_layers);
        let mut b0_last = Vec::new();
        for (lp, lo) in self.plan.layers.iter().zip(&off.layers) {
            let h: Vec<_> = a
                .iter()
                .map(|x| lp.lin1.apply(x, p(&lo.lin1)))
                .collect::<Result<_, _>>()?;
            let np = lp.tp.weight_numel();
            let msgs: Vec<EquivariantFeature<S>> = nl
                .edges
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let r1: Vec<S> = dense(p(&lo.mlp0), &radial[k], fdim)
                        .into_iter()
                        .map(S::silu)
                        .collect();
                    let r2: Vec<S> = dense(p(&lo.mlp1), &r1, fdim)
                        .into_iter()
                        .map(S::silu)
                        .collect();
                    let w = dense(p(&lo.mlp2), &r2, np);
                    lp.tp.apply(&ys[k], &h[e.j], &w)
                })
                .collect::<Result<_, _>>()?;
            let dim = lp.tp.out_spec().dim();
            let mut next = Vec::with_capacity(n);
            let mut col = Vec::new();
            for i in 0..n {
                let mut agg = vec![S::zero(); dim];
                let es = first[i]..first[i + 1];
                if !es.is_empty() {
                    for (c, slot) in agg.iter_mut().enumerate() {
                        col.clear();
                        col.extend(msgs[es.clone()].iter().map(|m| m.as_slice()[c]));
                        *slot = S::sum_of(&col) * inv_avg;
                    }
                }
                let agg = EquivariantFeature::from_vec(lp.tp.out_spec().clone(), agg)?;
                let conv = lp.lin2.apply(&agg, p(&lo.lin2))?;
                let si = lp.si.apply(&a[i], p(&lo.si[zi[i]]))?;
                let v: Vec<S> = si
                    .as_slice()
                    .iter()
                    .zip(conv.as_slice())
                    .map(|(&x, &y)| x + y)
                    .collect();
                next.push(EquivariantFeature::from_vec(self.plan.hidden.clone(), v)?);
            }
            a = next;

            // invariant part of A ⊗ a1, then the readout
            let k0 = self.plan.hidden.find(Irrep::scalar()).expect("validated");
            let bw = p(&lo.b);
            let mut e_t = Vec::with_capacity(n);
            let mut b0s = Vec::with_capacity(n);
            for i in 0..n {
                let s0 = a[i].block(k0);
                let b0: Vec<S> = (0..m0).map(|u| bw[u] * s0[u] * a1[i][u]).collect();
                let hid: Vec<S> = dense(p(&lo.ro1), &b0, fdim)
                    .into_iter()
                    .map(S::silu)
                    .collect();
                let mut e = S::dot(p(&lo.ro2), &hid);
                if let Some(r0) = &lo.ro0 {
                    e = e + theta[r0.start + zi[i]];
                }
                e_t.push(e);
                b0s.push(b0);
            }
            layer_energies.push(e_t);
            b0_last = b0s;
        }

        let atom_energies: Vec<S> = (0..n)
            .map(|i| {
                let mut e = layer_energies[0][i];
                for le in &layer_energies[1..] {
                    e = e + le[i];
                }
                e
            })
            .collect();
        let energy = S::sum_of(&atom_energies);

        let mut out = ForwardOutput {
            energy,
            atom_energies,
            layer_energies,
            atom_variances: Vec::new(),
            energy_var: None,
            force_cov: Vec::new(),
        };
        if cfg.head_mode == HeadMode::Base {
            return Ok(out);
        }
        for i in 0..n {
            let hh: Vec<S> = dense(p(&off.head_h), &b0_last[i], fdim)
                .into_iter()
                .zip(p(&off.head_hb))
                .map(|(x, &b)| (x + b).silu())
                .collect();
            let raw = S::dot(p(&off.head_var), &hh) + theta[off.head_varb.start];
            out.atom_variances
                .push(per_atom_variance(raw, cfg.variance_activation, cfg.variance_floor));
            if cfg.head_mode == HeadMode::Mve8 {
                let cov = match cfg.cov_param {
                    CovarianceParam::Equivariant => {
                        let c0 = S::dot(p(&off.head_c0), &hh) + theta[off.head_c0b.start];
                        let x2 = self.x2_channel(&a[i], p(&off.head_x2));
                        equivariant_force_cov(c0, &x2, cfg.cov_jitter)
                    }
                    CovarianceParam::Cholesky => {
                        let raw6 = dense(p(&off.head_chol), &hh, 6);
                        let bias = p(&off.head_cholb);
                        let six: [S; 6] = std::array::from_fn(|k| raw6[k] + bias[k]);
                        assemble_force_cov(&six, cfg.cov_jitter)
                    }
                };
                out.force_cov.push(cov);
            }
        }
        out.energy_var = Some(S::sum_of(&out.atom_variances));
        Ok(out)
    }

    /// `x = Σ_c w_c q_c` over the `l = 2` couplings `q_c` of the node feature:
    /// each `l ≥ 1` channel with itself, plus any `2e` channels directly.
    fn x2_channel<S: Scalar>(&self, a: &EquivariantFeature<S>, w: &[S]) -> [S; 5] {
        let mut qs: Vec<[S; 5]> = Vec::with_capacity(self.plan.x2_channels);
        let mut coeffs = Vec::new();
        let mut xs = Vec::new();
        for &(k, coupled) in &self.plan.x2_sources {
            let e: IrrepEntry = self.plan.hidden.entries()[k];
            let d = e.ir.dim();
            let blk = a.block(k);
            for u in 0..e.mult {
                let v = &blk[u * d..(u + 1) * d];
                if !coupled {
                    qs.push(std::array::from_fn(|m| v[m]));
                    continue;
                }
                let cg = cg_block(e.ir.l, e.ir.l, 2).expect("l ≥ 1 couples to 2");
                let q: [S; 5] = std::array::from_fn(|mm| {
                    coeffs.clear();
                    xs.clear();
                    for i in 0..d {
                        for j in 0..d {
                            let c = cg[(mm * d + i) * d + j];
                            if c != 0.0 {
                                coeffs.push(c);
                                xs.push(v[i] * v[j]);
                            }
                        }
                    }
                    if coeffs.is_empty() {
                        S::zero()
                    } else {
                        S::lin_comb(&coeffs, &xs)
                    }
                });
                qs.push(q);
            }
        }
        std::array::from_fn(|m| {
            let col: Vec<S> = qs.iter().map(|q| q[m]).collect();
            S::dot(w, &col)
        })
    }
}

pub(crate) fn fill_offsets(lay: &ParamLayout, cfg: &ModelConfig) -> Offsets {
    let r = |n: &str| lay.range(n).unwrap_or(0..0);
    // linear maps are stored as consecutive per-block entries
    let span = |prefix: &str| {
        let mut it = lay
            .entries()
            .iter()
            .filter(|e| e.name.starts_with(&format!("{prefix}.")));
        match it.next() {
            None => 0..0,
            Some(f) => {
                let end = it.last().map_or(f.offset + f.len, |l| l.offset + l.len);
                f.offset..end
            }
        }
    };
    let layers = (1..=cfg.n_layers)
        .map(|t| LayerOffsets {
            lin1: span(&format!("L{t}.lin1")),
            mlp0: r(&format!("L{t}.mlp0")),
            mlp1: r(&format!("L{t}.mlp1")),
            mlp2: r(&format!("L{t}.mlp2")),
            lin2: span(&format!("L{t}.lin2")),
            si: (0..cfg.species_list.len())
                .map(|z| span(&format!("L{t}.si{z}")))
                .collect(),
            b: r(&format!("L{t}.b")),
            ro1: r(&format!("L{t}.ro1")),
            ro2: r(&format!("L{t}.ro2")),
            ro0: lay.range(&format!("L{t}.ro0")),
        })
        .collect();
    let cholb = match (lay.range("head.cholb_diag"), lay.range("head.cholb_off")) {
        (Some(a), Some(b)) => a.start..b.end,
        _ => 0..0,
    };
    Offsets {
        embed: r("embed"),
        a1: r("a1"),
        layers,
        head_h: r("head.h"),
        head_hb: r("head.hb"),
        head_var: r("head.var"),
        head_varb: r("head.varb"),
        head_c0: r("head.c0"),
        head_c0b: r("head.c0b"),
        head_x2: r("head.x2"),
        head_chol: r("head.chol"),
        head_cholb: cholb,
    }
}
