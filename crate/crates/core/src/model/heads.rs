use super::config::VarianceActivation;
use crate::numeric::mat3::{self, Mat3};
use crate::numeric::Scalar;
use std::f64::consts::FRAC_1_SQRT_2;

/// `σ_i² + ε_v` with `σ_i = act(raw)`.
pub fn per_atom_variance<S: Scalar>(raw: S, act: VarianceActivation, floor: f64) -> S {
    let s = match act {
        VarianceActivation::Softplus => raw.softplus(),
        VarianceActivation::Exp => raw.exp(),
    };
    s * s + S::cst(floor)
}

/// Structure energy variance: independent per-atom contributions summed.
pub fn energy_variance<S: Scalar>(raw: &[S], act: VarianceActivation, floor: f64) -> S {
    let v: Vec<S> = raw
        .iter()
        .map(|&r| per_atom_variance(r, act, floor))
        .collect();
    S::sum_of(&v)
}

/// `Σ = L Lᵀ + εI` from six raw channels, with
/// `L = [[σ1, 0, 0], [σ6, σ2, 0], [σ5, σ4, σ3]]` and the diagonal passed
/// through softplus.
pub fn assemble_force_cov<S: Scalar>(six: &[S; 6], eps: f64) -> Mat3<S> {
    let z = S::zero();
    let l = [
        [six[0].softplus(), z, z],
        [six[5], six[1].softplus(), z],
        [six[4], six[3], six[2].softplus()],
    ];
    let mut s = mat3::mul(&l, &mat3::transpose(&l));
    for (k, row) in s.iter_mut().enumerate() {
        row[k] += S::cst(eps);
    }
    s
}

/// Traceless symmetric matrices `T_m` with `rᵀ T_m r ∝ Y_2^m(r)`, in the
/// harmonic order `m = −2..2`, orthonormal under the Frobenius product.
pub fn l2_basis() -> [Mat3<f64>; 5] {
    let a = FRAC_1_SQRT_2;
    let b = 1.0 / 6f64.sqrt();
    [
        [[0.0, a, 0.0], [a, 0.0, 0.0], [0.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 0.0, a], [0.0, a, 0.0]],
        [[-b, 0.0, 0.0], [0.0, -b, 0.0], [0.0, 0.0, 2.0 * b]],
        [[0.0, 0.0, a], [0.0, 0.0, 0.0], [a, 0.0, 0.0]],
        [[a, 0.0, 0.0], [0.0, -a, 0.0], [0.0, 0.0, 0.0]],
    ]
}

/// `A = c₀ I + Σ_m x_m T_m`, `Σ = A Aᵀ + εI`. Rotating `x` with the degree-2
/// Wigner matrix turns `Σ` into `R Σ Rᵀ`.
pub fn equivariant_force_cov<S: Scalar>(c0: S, x: &[S; 5], eps: f64) -> Mat3<S> {
    let t = l2_basis();
    let mut a: Mat3<S> = mat3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            let (coeffs, xs): (Vec<f64>, Vec<S>) = (0..5)
                .filter(|&m| t[m][r][c] != 0.0)
                .map(|m| (t[m][r][c], x[m]))
                .unzip();
            a[r][c] = if coeffs.is_empty() {
                S::zero()
            } else {
                S::lin_comb(&coeffs, &xs)
            };
        }
        a[r][r] += c0;
    }
    let mut s = mat3::mul(&a, &mat3::transpose(&a));
    for (k, row) in s.iter_mut().enumerate() {
        row[k] += S::cst(eps);
    }
    s
}
