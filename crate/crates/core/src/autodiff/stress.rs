use super::{AdError, Tape, Var};
use crate::numeric::mat3::{self, Mat3};

/// Energy and stress `S = (1/V)·∂E/∂ε` of a periodic system, where a
/// homogeneous strain maps every position `r ↦ (I+ε) r` and every lattice
/// vector (row of `cell`) the same way. The cell enters the energy through
/// the periodic edge vectors, so
/// `S_ab = (1/V) [ Σ_k (∂E/∂h)_ka h_kb + Σ_i (∂E/∂r_i)_a r_ib ]`, symmetrized.
pub fn stress_of<E, F>(
    positions: &[[f64; 3]],
    cell: &Mat3<f64>,
    energy: F,
) -> Result<(f64, Mat3<f64>), E>
where
    E: From<AdError>,
    F: FnOnce(&[[Var; 3]], &Mat3<Var>) -> Result<Var, E>,
{
    let tape = Tape::try_start(false)?;
    let pos: Vec<[Var; 3]> = positions
        .iter()
        .map(|p| [tape.leaf(p[0]), tape.leaf(p[1]), tape.leaf(p[2])])
        .collect();
    let h: Mat3<Var> = std::array::from_fn(|k| std::array::from_fn(|a| tape.leaf(cell[k][a])));
    let e = energy(&pos, &h)?;
    let mut wrt: Vec<Var> = pos.iter().flatten().copied().collect();
    wrt.extend(h.iter().flatten().copied());
    let g = tape.grad(&[e], &wrt)?;
    let n = positions.len();
    let vol = mat3::det(cell).abs();
    let mut s = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for (i, r) in positions.iter().enumerate() {
                acc += g[3 * i + a] * r[b];
            }
            for (k, hk) in cell.iter().enumerate() {
                acc += g[3 * n + 3 * k + a] * hk[b];
            }
            s[a][b] = acc / vol;
        }
    }
    let sym = std::array::from_fn(|a| std::array::from_fn(|b| 0.5 * (s[a][b] + s[b][a])));
    Ok((e.value(), sym))
}
