use super::GeometryError;
use crate::numeric::Scalar;
use std::f64::consts::PI;

const P: f64 = 6.0;

/// Polynomial cutoff envelope of order 6, `u = r / r_cut`:
/// `1 − 28u⁶ + 48u⁷ − 21u⁸`. Value, slope and curvature vanish at `u = 1`.
pub fn envelope<S: Scalar>(u: S) -> S {
    let a = (P + 1.0) * (P + 2.0) / 2.0;
    let b = P * (P + 2.0);
    let c = P * (P + 1.0) / 2.0;
    let u2 = u * u;
    let u6 = u2 * u2 * u2;
    S::one() - u6 * (S::cst(a) - u * (S::cst(b) - u * S::cst(c)))
}

/// `√(2/r_c³) · sin(nπx)/x · f_env(x)`, `x = r/r_c`, for `n = 1..=n_basis`,
/// appended to `out`. Beyond the cutoff every value is zero. `r` must be
/// positive.
pub fn bessel_values<S: Scalar>(r: S, n_basis: usize, r_cut: f64, out: &mut Vec<S>) {
    if r.val() >= r_cut {
        out.extend(std::iter::repeat_n(S::zero(), n_basis));
        return;
    }
    let pre = (2.0 / (r_cut * r_cut * r_cut)).sqrt();
    let x = r / S::cst(r_cut);
    let scale = envelope(x) * S::cst(pre) / x;
    for n in 1..=n_basis {
        out.push((x * S::cst(n as f64 * PI)).sin() * scale);
    }
}

pub fn bessel_basis(r: f64, n_basis: usize, r_cut: f64) -> Result<Vec<f64>, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::DomainError(r));
    }
    let mut v = Vec::with_capacity(n_basis);
    bessel_values(r, n_basis, r_cut, &mut v);
    Ok(v)
}

/// `d/dr` of [`bessel_basis`].
pub fn bessel_basis_derivative(
    r: f64,
    n_basis: usize,
    r_cut: f64,
) -> Result<Vec<f64>, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::DomainError(r));
    }
    if r >= r_cut {
        return Ok(vec![0.0; n_basis]);
    }
    let pre = (2.0 / (r_cut * r_cut * r_cut)).sqrt();
    let x = r / r_cut;
    let f = envelope(x);
    let df = -P * (P + 1.0) * (P + 2.0) / 2.0 * x.powi(5) * (1.0 - x) * (1.0 - x);
    Ok((1..=n_basis)
        .map(|n| {
            let k = n as f64 * PI;
            let g = (k * x).sin() / x;
            let dg = (k * (k * x).cos() * x - (k * x).sin()) / (x * x);
            pre * (dg * f + g * df) / r_cut
        })
        .collect())
}
