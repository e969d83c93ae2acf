//! Scalar abstractions shared by the model, the losses and the metrics.
//!
//! Everything that has to be differentiated is written once against
//! [`Scalar`]. The same code then runs on plain `f64` (fast inference and
//! finite-difference oracles), on `f32`, and on the tape variable
//! [`Var`](crate::autodiff::Var) when gradients are needed.

use num_traits::{Float, FloatConst};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// A differentiable real scalar.
pub trait Scalar:
    Float
    + FloatConst
    + Debug
    + Display
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    /// Lifts an `f64` constant.
    fn cst(x: f64) -> Self;

    /// Primal value as `f64`.
    fn val(self) -> f64;

    /// `Σ a_k b_k`. Slices must have equal length.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .fold(Self::zero(), |acc, (&x, &y)| acc + x * y)
    }

    /// `Σ c_k x_k` with constant coefficients.
    fn lin_comb(coeffs: &[f64], xs: &[Self]) -> Self {
        debug_assert_eq!(coeffs.len(), xs.len());
        coeffs
            .iter()
            .zip(xs)
            .fold(Self::zero(), |acc, (&c, &x)| acc + Self::cst(c) * x)
    }

    fn sum_of(xs: &[Self]) -> Self {
        xs.iter().fold(Self::zero(), |acc, &x| acc + x)
    }

    /// Logistic function, evaluated without overflow for large |x|.
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `x · σ(x)`.
    fn silu(self) -> Self {
        self * self.sigmoid()
    }

    /// `ln(1 + eˣ)`, evaluated without overflow for large |x|.
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }
}

/// Plain machine floats. Metrics and posterior statistics are generic over
/// this trait; the tape variable does not implement it.
pub trait Real: Scalar + Send + Sync {}

impl Scalar for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn cst(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn val(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {}
impl Real for f32 {}

/// Dense 3×3 helpers over any scalar. Row-major `[[S; 3]; 3]`.
pub mod mat3 {
    use super::Scalar;

    pub type Mat3<S> = [[S; 3]; 3];

    pub fn zeros<S: Scalar>() -> Mat3<S> {
        [[S::zero(); 3]; 3]
    }

    pub fn identity<S: Scalar>() -> Mat3<S> {
        let mut m = zeros();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = S::one();
        }
        m
    }

    pub fn mul<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
        let mut c = zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        c
    }

    pub fn transpose<S: Scalar>(a: &Mat3<S>) -> Mat3<S> {
        let mut t = zeros();
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = a[j][i];
            }
        }
        t
    }

    pub fn mul_vec<S: Scalar>(a: &Mat3<S>, v: &[S; 3]) -> [S; 3] {
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
        ]
    }

    /// `R · A · Rᵀ`.
    pub fn conjugate<S: Scalar>(r: &Mat3<S>, a: &Mat3<S>) -> Mat3<S> {
        mul(&mul(r, a), &transpose(r))
    }

    pub fn det<S: Scalar>(a: &Mat3<S>) -> S {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    pub fn to_f64<S: Scalar>(a: &Mat3<S>) -> Mat3<f64> {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i][j].val();
            }
        }
        m
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix, or
    /// `None` if a pivot is not strictly positive.
    pub fn cholesky<S: Scalar>(a: &Mat3<S>) -> Option<Mat3<S>> {
        let mut l = zeros::<S>();
        for i in 0..3 {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s.val() > 0.0) {
                        return None;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Some(l)
    }

    /// Frobenius norm of `a - b`, in f64.
    pub fn frob_diff(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += (a[i][j] - b[i][j]).powi(2);
            }
        }
        s.sqrt()
    }
}
