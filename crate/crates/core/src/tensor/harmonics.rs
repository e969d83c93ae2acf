use super::irreps::{EquivariantFeature, IrrepsSpec};
use super::TensorError;
use crate::numeric::Scalar;

pub const L_MAX: usize = 3;

/// Real spherical harmonics of a unit vector, no Condon–Shortley phase,
/// `m = -l..=l` within each degree. Values for `l = 0..=l_max` are
/// appended to `out`. The direction is not checked; see
/// [`spherical_harmonics`].
pub fn sh_values<S: Scalar>(d: [S; 3], l_max: usize, out: &mut Vec<S>) {
    use std::f64::consts::PI;
    let [x, y, z] = d;
    let c = S::cst;
    out.push(c(0.5 / PI.sqrt()));
    if l_max == 0 {
        return;
    }
    let c1 = (3.0 / (4.0 * PI)).sqrt();
    out.extend([c(c1) * y, c(c1) * z, c(c1) * x]);
    if l_max == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let r2 = xx + yy + zz;
    let c2 = 0.5 * (15.0 / PI).sqrt();
    let c20 = 0.25 * (5.0 / PI).sqrt();
    out.extend([
        c(c2) * x * y,
        c(c2) * y * z,
        c(c20) * (c(3.0) * zz - r2),
        c(c2) * x * z,
        c(0.5 * c2) * (xx - yy),
    ]);
    if l_max == 2 {
        return;
    }
    let c33 = 0.25 * (35.0 / (2.0 * PI)).sqrt();
    let c32 = 0.5 * (105.0 / PI).sqrt();
    let c31 = 0.25 * (21.0 / (2.0 * PI)).sqrt();
    let c30 = 0.25 * (7.0 / PI).sqrt();
    let t = c(5.0) * zz - r2;
    out.extend([
        c(c33) * y * (c(3.0) * xx - yy),
        c(c32) * x * y * z,
        c(c31) * y * t,
        c(c30) * z * (c(5.0) * zz - c(3.0) * r2),
        c(c31) * x * t,
        c(0.5 * c32) * z * (xx - yy),
        c(c33) * x * (xx - c(3.0) * yy),
    ]);
}

/// `Y_l^m(direction)` for `l = 0..=l_max`, one multiplicity-1 block per
/// degree with parity (−1)^l.
pub fn spherical_harmonics<S: Scalar>(
    direction: [S; 3],
    l_max: usize,
) -> Result<EquivariantFeature<S>, TensorError> {
    if l_max > L_MAX {
        return Err(TensorError::UnsupportedDegree(l_max));
    }
    let n2: f64 = direction.iter().map(|v| v.val() * v.val()).sum();
    if !((n2.sqrt() - 1.0).abs() <= 1e-9) {
        return Err(TensorError::NonUnitVector(n2.sqrt()));
    }
    let mut v = Vec::with_capacity((l_max + 1) * (l_max + 1));
    sh_values(direction, l_max, &mut v);
    EquivariantFeature::from_vec(IrrepsSpec::spherical_harmonics(l_max), v)
}
