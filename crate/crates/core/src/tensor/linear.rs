use super::irreps::{EquivariantFeature, IrrepsSpec};
use super::TensorError;
use crate::numeric::Scalar;

/// Block-diagonal linear map between two irreps layouts: each `(l, p)`
/// block gets its own `mult_out × mult_in` matrix; blocks of the output
/// absent from the input stay zero. No bias.
#[derive(Clone, Debug)]
pub struct EquivariantLinear {
    input: IrrepsSpec,
    output: IrrepsSpec,
    // (input block, output block, weight offset)
    maps: Vec<(usize, usize, usize)>,
    weight_numel: usize,
}

impl EquivariantLinear {
    pub fn new(input: &IrrepsSpec, output: &IrrepsSpec) -> Self {
        let mut maps = Vec::new();
        let mut w = 0;
        for (ko, eo) in output.entries().iter().enumerate() {
            if let Some(ki) = input.find(eo.ir) {
                maps.push((ki, ko, w));
                w += eo.mult * input.entries()[ki].mult;
            }
        }
        EquivariantLinear {
            input: input.clone(),
            output: output.clone(),
            maps,
            weight_numel: w,
        }
    }

    pub fn input(&self) -> &IrrepsSpec {
        &self.input
    }

    pub fn output(&self) -> &IrrepsSpec {
        &self.output
    }

    pub fn weight_numel(&self) -> usize {
        self.weight_numel
    }

    /// `(input multiplicity, output multiplicity, weight offset)` per mapped block.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.maps.iter().map(|&(ki, ko, off)| {
            (
                self.input.entries()[ki].mult,
                self.output.entries()[ko].mult,
                off,
            )
        })
    }

    pub fn apply<S: Scalar>(
        &self,
        x: &EquivariantFeature<S>,
        w: &[S],
    ) -> Result<EquivariantFeature<S>, TensorError> {
        if x.spec() != &self.input {
            return Err(TensorError::ShapeError(format!(
                "linear expects {}, got {}",
                self.input,
                x.spec()
            )));
        }
        if w.len() != self.weight_numel {
            return Err(TensorError::ShapeError(format!(
                "linear needs {} weights, got {}",
                self.weight_numel,
                w.len()
            )));
        }
        let mut out = EquivariantFeature::zeros(self.output.clone());
        let mut col: Vec<S> = Vec::new();
        for &(ki, ko, off) in &self.maps {
            let ein = self.input.entries()[ki];
            let mo = self.output.entries()[ko].mult;
            let (mi, d) = (ein.mult, ein.ir.dim());
            let src = x.block(ki);
            let dst = out.block_mut(ko);
            for m in 0..d {
                col.clear();
                col.extend((0..mi).map(|u| src[u * d + m]));
                for v in 0..mo {
                    let row = &w[off + v * mi..off + (v + 1) * mi];
                    dst[v * d + m] = S::dot(row, &col);
                }
            }
        }
        Ok(out)
    }
}

/// `x ↦ W x` block by block, output layout `out_spec`.
pub fn equivariant_linear<S: Scalar>(
    x: &EquivariantFeature<S>,
    out_spec: &IrrepsSpec,
    weights: &[S],
) -> Result<EquivariantFeature<S>, TensorError> {
    EquivariantLinear::new(x.spec(), out_spec).apply(x, weights)
}
