use super::cg::cg_block;
use super::harmonics::L_MAX;
use super::irreps::{EquivariantFeature, Irrep, IrrepEntry, IrrepsSpec};
use super::TensorError;
use crate::numeric::Scalar;

/// How the channels of the two operands are paired on one path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    /// Equal multiplicities: channel `u` of `a` with channel `u` of `b`.
    Elementwise,
    /// `b` has one channel, shared by every channel of `a`.
    ShareRight,
    /// `a` has one channel, shared by every channel of `b`.
    ShareLeft,
    /// All `u·v` channel pairs.
    Outer,
}

#[derive(Clone, Debug)]
pub struct TpPath {
    pub i1: usize,
    pub i2: usize,
    pub ir_out: Irrep,
    pub mode: ChannelMode,
    pub mult: usize,
    pub weight_offset: usize,
    out_block: usize,
    out_channel: usize,
    l1: usize,
    l2: usize,
    cg: &'static [f64],
}

/// Weighted Clebsch–Gordan product `a ⊗ b`, one learnable weight per
/// (path, output channel). Paths landing in the same output irrep are
/// concatenated along the multiplicity axis, in `(block of a, block of b, L)`
/// order.
#[derive(Clone, Debug)]
pub struct TensorProduct {
    in1: IrrepsSpec,
    in2: IrrepsSpec,
    out: IrrepsSpec,
    paths: Vec<TpPath>,
    weight_numel: usize,
}

fn mode_for(m1: usize, m2: usize) -> (ChannelMode, usize) {
    if m1 == m2 {
        (ChannelMode::Elementwise, m1)
    } else if m2 == 1 {
        (ChannelMode::ShareRight, m1)
    } else if m1 == 1 {
        (ChannelMode::ShareLeft, m2)
    } else {
        (ChannelMode::Outer, m1 * m2)
    }
}

impl TensorProduct {
    /// All allowed paths whose output irrep passes `keep`; the output spec
    /// is derived from them.
    pub fn new(
        in1: &IrrepsSpec,
        in2: &IrrepsSpec,
        keep: impl Fn(Irrep) -> bool,
    ) -> Result<Self, TensorError> {
        if in1.l_max() > L_MAX || in2.l_max() > L_MAX {
            return Err(TensorError::UnsupportedDegree(in1.l_max().max(in2.l_max())));
        }
        let mut raw = Vec::new();
        for (i1, e1) in in1.entries().iter().enumerate() {
            for (i2, e2) in in2.entries().iter().enumerate() {
                let (l1, l2) = (e1.ir.l, e2.ir.l);
                for l in l1.abs_diff(l2)..=(l1 + l2).min(L_MAX) {
                    let ir = Irrep::new(l, e1.ir.p * e2.ir.p);
                    if !keep(ir) {
                        continue;
                    }
                    let (mode, mult) = mode_for(e1.mult, e2.mult);
                    raw.push((i1, i2, ir, mode, mult, l1, l2));
                }
            }
        }
        let mut totals: Vec<IrrepEntry> = Vec::new();
        for &(_, _, ir, _, mult, _, _) in &raw {
            match totals.iter_mut().find(|e| e.ir == ir) {
                Some(e) => e.mult += mult,
                None => totals.push(IrrepEntry { mult, ir }),
            }
        }
        let out = IrrepsSpec::new(totals)?;
        let mut fill = vec![0usize; out.len()];
        let mut paths = Vec::with_capacity(raw.len());
        let mut w = 0;
        for (i1, i2, ir, mode, mult, l1, l2) in raw {
            let ob = out.find(ir).expect("derived");
            paths.push(TpPath {
                i1,
                i2,
                ir_out: ir,
                mode,
                mult,
                weight_offset: w,
                out_block: ob,
                out_channel: fill[ob],
                l1,
                l2,
                cg: cg_block(l1, l2, ir.l).expect("triangle rule checked"),
            });
            fill[ob] += mult;
            w += mult;
        }
        Ok(TensorProduct {
            in1: in1.clone(),
            in2: in2.clone(),
            out,
            paths,
            weight_numel: w,
        })
    }

    /// Paths into the irreps of `out`; every block of `out` must be reached
    /// and its multiplicity must equal the channels its paths produce.
    pub fn with_output(
        in1: &IrrepsSpec,
        in2: &IrrepsSpec,
        out: &IrrepsSpec,
    ) -> Result<Self, TensorError> {
        let tp = Self::new(in1, in2, |ir| out.find(ir).is_some())?;
        for e in out.entries() {
            let got = tp.out.mult_of(e.ir);
            if got == 0 {
                return Err(TensorError::InvalidPath(e.ir.to_string()));
            }
            if got != e.mult {
                return Err(TensorError::ShapeError(format!(
                    "output block {} has multiplicity {}, its paths produce {}",
                    e.ir, e.mult, got
                )));
            }
        }
        Ok(tp)
    }

    pub fn out_spec(&self) -> &IrrepsSpec {
        &self.out
    }

    pub fn paths(&self) -> &[TpPath] {
        &self.paths
    }

    pub fn weight_numel(&self) -> usize {
        self.weight_numel
    }

    pub fn apply<S: Scalar>(
        &self,
        a: &EquivariantFeature<S>,
        b: &EquivariantFeature<S>,
        w: &[S],
    ) -> Result<EquivariantFeature<S>, TensorError> {
        if a.spec() != &self.in1 || b.spec() != &self.in2 {
            return Err(TensorError::ShapeError(format!(
                "tensor product expects {} ⊗ {}, got {} ⊗ {}",
                self.in1,
                self.in2,
                a.spec(),
                b.spec()
            )));
        }
        if w.len() != self.weight_numel {
            return Err(TensorError::ShapeError(format!(
                "tensor product needs {} weights, got {}",
                self.weight_numel,
                w.len()
            )));
        }
        let mut out = EquivariantFeature::zeros(self.out.clone());
        let mut kern: Vec<S> = Vec::new();
        let mut coeffs: Vec<f64> = Vec::new();
        let mut xs: Vec<S> = Vec::new();
        for p in &self.paths {
            let (n1, n2, n) = (2 * p.l1 + 1, 2 * p.l2 + 1, p.ir_out.dim());
            let blk_a = a.block(p.i1);
            let blk_b = b.block(p.i2);
            let m2 = self.in2.entries()[p.i2].mult;
            let ws = &w[p.weight_offset..p.weight_offset + p.mult];
            let mut res = vec![S::zero(); p.mult * n];

            if n1 == 1 && n2 == 1 {
                // scalar × scalar: coefficient is 1
                for c in 0..p.mult {
                    let (u, v) = pair(p.mode, c, m2);
                    res[c] = ws[c] * blk_a[u] * blk_b[v];
                }
            } else if p.mode == ChannelMode::ShareLeft {
                // contract the shared operand once: K[M][m2] = Σ_m1 C a[m1]
                left_kernel(p.cg, n, n1, n2, &blk_a[..n1], &mut kern, &mut coeffs, &mut xs);
                for c in 0..p.mult {
                    let bv = &blk_b[c * n2..(c + 1) * n2];
                    for mm in 0..n {
                        res[c * n + mm] = ws[c] * S::dot(&kern[mm * n2..(mm + 1) * n2], bv);
                    }
                }
            } else {
                let mut cached_v = usize::MAX;
                for c in 0..p.mult {
                    let (u, v) = pair(p.mode, c, m2);
                    if v != cached_v {
                        right_kernel(
                            p.cg,
                            n,
                            n1,
                            n2,
                            &blk_b[v * n2..(v + 1) * n2],
                            &mut kern,
                            &mut coeffs,
                            &mut xs,
                        );
                        cached_v = v;
                    }
                    let au = &blk_a[u * n1..(u + 1) * n1];
                    for mm in 0..n {
                        res[c * n + mm] = ws[c] * S::dot(&kern[mm * n1..(mm + 1) * n1], au);
                    }
                }
            }
            let dst = out.block_mut(p.out_block);
            dst[p.out_channel * n..(p.out_channel + p.mult) * n].copy_from_slice(&res);
        }
        Ok(out)
    }
}

fn pair(mode: ChannelMode, c: usize, m2: usize) -> (usize, usize) {
    match mode {
        ChannelMode::Elementwise => (c, c),
        ChannelMode::ShareRight => (c, 0),
        ChannelMode::ShareLeft => (0, c),
        ChannelMode::Outer => (c / m2, c % m2),
    }
}

/// `K[M][m2] = Σ_m1 C[M][m1][m2] a[m1]`.
#[allow(clippy::too_many_arguments)]
fn left_kernel<S: Scalar>(
    cg: &[f64],
    n: usize,
    n1: usize,
    n2: usize,
    a: &[S],
    kern: &mut Vec<S>,
    coeffs: &mut Vec<f64>,
    xs: &mut Vec<S>,
) {
    kern.clear();
    for mm in 0..n {
        for j in 0..n2 {
            coeffs.clear();
            xs.clear();
            for i in 0..n1 {
                let c = cg[(mm * n1 + i) * n2 + j];
                if c != 0.0 {
                    coeffs.push(c);
                    xs.push(a[i]);
                }
            }
            kern.push(if coeffs.is_empty() {
                S::zero()
            } else {
                S::lin_comb(coeffs, xs)
            });
        }
    }
}

/// `K[M][m1] = Σ_m2 C[M][m1][m2] b[m2]`.
#[allow(clippy::too_many_arguments)]
fn right_kernel<S: Scalar>(
    cg: &[f64],
    n: usize,
    n1: usize,
    n2: usize,
    b: &[S],
    kern: &mut Vec<S>,
    coeffs: &mut Vec<f64>,
    xs: &mut Vec<S>,
) {
    kern.clear();
    for mm in 0..n {
        for i in 0..n1 {
            coeffs.clear();
            xs.clear();
            for j in 0..n2 {
                let c = cg[(mm * n1 + i) * n2 + j];
                if c != 0.0 {
                    coeffs.push(c);
                    xs.push(b[j]);
                }
            }
            kern.push(if coeffs.is_empty() {
                S::zero()
            } else {
                S::lin_comb(coeffs, xs)
            });
        }
    }
}

/// Weighted tensor product into a given output layout.
pub fn tensor_product<S: Scalar>(
    a: &EquivariantFeature<S>,
    b: &EquivariantFeature<S>,
    out_spec: &IrrepsSpec,
    weights: &[S],
) -> Result<EquivariantFeature<S>, TensorError> {
    TensorProduct::with_output(a.spec(), b.spec(), out_spec)?.apply(a, b, weights)
}
