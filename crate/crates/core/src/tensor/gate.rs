use super::irreps::{EquivariantFeature, Parity};
use super::TensorError;
use crate::numeric::Scalar;

/// Gated nonlinearity. Even scalars go through SiLU, odd scalars through
/// tanh (an odd function keeps them odd under inversion), and every channel
/// of a block with `l > 0` is scaled by SiLU of its own gate scalar.
/// `gates` holds one value per non-scalar channel, in block order.
pub fn gate<S: Scalar>(
    x: &EquivariantFeature<S>,
    gates: &[S],
) -> Result<EquivariantFeature<S>, TensorError> {
    let need = x.spec().nonscalar_mult();
    if gates.len() != need {
        return Err(TensorError::ShapeError(format!(
            "gate needs {} scalars for {}, got {}",
            need,
            x.spec(),
            gates.len()
        )));
    }
    let mut out = x.clone();
    let mut g = 0;
    for (k, e) in x.spec().entries().iter().enumerate() {
        let blk = out.block_mut(k);
        if e.ir.is_scalar() {
            for v in blk.iter_mut() {
                *v = match e.ir.p {
                    Parity::Even => v.silu(),
                    Parity::Odd => v.tanh(),
                };
            }
        } else {
            let d = e.ir.dim();
            for u in 0..e.mult {
                let s = gates[g].silu();
                g += 1;
                for v in &mut blk[u * d..(u + 1) * d] {
                    *v = *v * s;
                }
            }
        }
    }
    Ok(out)
}
