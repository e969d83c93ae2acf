use super::harmonics::sh_values;
use super::irreps::EquivariantFeature;
use crate::numeric::mat3::{self, Mat3};
use nalgebra::DMatrix;

// Generic directions; 20 points determine D for every l ≤ 3.
const PROBES: [[f64; 3]; 20] = [
    [0.31, -0.72, 0.62],
    [-0.55, 0.18, 0.81],
    [0.92, 0.27, -0.28],
    [-0.11, -0.95, -0.29],
    [0.44, 0.66, 0.61],
    [-0.83, -0.41, 0.38],
    [0.07, 0.12, -0.99],
    [0.63, -0.21, -0.75],
    [-0.36, 0.88, -0.31],
    [0.71, 0.70, 0.05],
    [-0.97, 0.15, -0.19],
    [0.25, -0.33, 0.91],
    [-0.48, -0.77, 0.42],
    [0.58, 0.04, 0.81],
    [-0.19, 0.52, 0.83],
    [0.86, -0.49, 0.14],
    [-0.67, 0.64, 0.37],
    [0.12, 0.98, -0.17],
    [-0.28, -0.26, -0.92],
    [0.39, -0.87, -0.30],
];

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn sh_degree(v: [f64; 3], l: usize) -> Vec<f64> {
    let mut out = Vec::new();
    sh_values(v, l, &mut out);
    out.split_off(l * l)
}

/// Wigner-D matrix of degree `l` for a proper rotation `r`, in the real
/// harmonic basis: `Y_l(R x) = D Y_l(x)`. Row-major `(2l+1)²`.
///
/// Obtained by least squares over fixed probe directions, so it is built
/// from the harmonics themselves and carries no separate convention.
pub fn wigner_d(l: usize, r: &Mat3<f64>) -> Vec<f64> {
    let n = 2 * l + 1;
    let k = PROBES.len();
    let mut y = DMatrix::<f64>::zeros(k, n);
    let mut yr = DMatrix::<f64>::zeros(k, n);
    for (i, p) in PROBES.iter().enumerate() {
        let p = normalized(*p);
        let a = sh_degree(p, l);
        let b = sh_degree(mat3::mul_vec(r, &p), l);
        for j in 0..n {
            y[(i, j)] = a[j];
            yr[(i, j)] = b[j];
        }
    }
    // Y Dᵀ = Y_R
    let dt = y
        .svd(true, true)
        .solve(&yr, 1e-14)
        .expect("probe matrix has full rank");
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = dt[(j, i)];
        }
    }
    d
}

/// Action of an orthogonal matrix on a feature: each degree-l block is
/// multiplied by D_l of the proper part, odd blocks also by det R.
pub fn rotate_feature(x: &EquivariantFeature<f64>, r: &Mat3<f64>) -> EquivariantFeature<f64> {
    let det = mat3::det(r);
    let proper = if det < 0.0 {
        let mut p = *r;
        for row in p.iter_mut() {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        p
    } else {
        *r
    };
    let mut out = x.clone();
    for (k, e) in x.spec().entries().iter().enumerate() {
        let n = e.ir.dim();
        let d = wigner_d(e.ir.l, &proper);
        let inv = if det < 0.0 { e.ir.p.sign() } else { 1.0 };
        let src = x.block(k).to_vec();
        let dst = out.block_mut(k);
        for u in 0..e.mult {
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += d[i * n + j] * src[u * n + j];
                }
                dst[u * n + i] = inv * s;
            }
        }
    }
    out
}
