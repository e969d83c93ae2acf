use super::tape::{raw_scope, NONE, TAPE};
use crate::numeric::Scalar;
use num_traits::{Float, FloatConst, Num, NumCast, One, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;
use std::iter::{Product, Sum};
use std::num::FpCategory;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

/// Scalar recorded on the thread's [`Tape`](super::Tape).
///
/// Values built only from constants never touch the tape, so `Var` also
/// works as a plain number when no tape is active.
#[derive(Clone, Copy)]
pub struct Var {
    val: f64,
    idx: u32,
    gen: u32,
}

impl Var {
    #[inline]
    pub const fn cst(x: f64) -> Self {
        Var {
            val: x,
            idx: NONE,
            gen: 0,
        }
    }

    #[inline]
    pub(crate) fn from_parts(val: f64, idx: u32, gen: u32) -> Self {
        Var { val, idx, gen }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.val
    }

    #[inline]
    pub fn is_const(self) -> bool {
        self.idx == NONE
    }

    #[inline]
    pub(crate) fn idx(self) -> u32 {
        self.idx
    }

    #[inline]
    pub(crate) fn gen(self) -> u32 {
        self.gen
    }

    /// Detaches the value from the tape.
    #[inline]
    pub fn detach(self) -> Self {
        Var::cst(self.val)
    }
}

#[inline]
fn record<const N: usize>(val: f64, edges: [(Var, f64, u32); N]) -> (Var, bool) {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        let graph = t.wants_graph();
        let idx = t.push(
            edges
                .into_iter()
                .filter(|e| !e.0.is_const())
                .map(|(v, d, p)| (v.idx, d, p)),
        );
        (
            Var {
                val,
                idx,
                gen: t.gen,
            },
            graph,
        )
    })
}

/// One-argument node. `dvar(a, out)` rebuilds the partial as a variable and
/// is only called when the tape records a differentiable backward pass.
#[inline]
fn unary(a: Var, val: f64, d: f64, dvar: impl FnOnce(Var, Var) -> Var) -> Var {
    if a.is_const() {
        return Var::cst(val);
    }
    let (out, graph) = record(val, [(a, d, NONE)]);
    if graph {
        let dv = raw_scope(|| dvar(a, out));
        if !dv.is_const() {
            TAPE.with(|t| t.borrow_mut().set_pvar(out.idx, 0, dv.idx));
        }
    }
    out
}

#[inline]
fn binary(
    a: Var,
    b: Var,
    val: f64,
    da: f64,
    db: f64,
    dvar: impl FnOnce(Var, Var, Var) -> (Var, Var),
) -> Var {
    if a.is_const() && b.is_const() {
        return Var::cst(val);
    }
    let (out, graph) = record(val, [(a, da, NONE), (b, db, NONE)]);
    if graph {
        let (pa, pb) = raw_scope(|| dvar(a, b, out));
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let mut k = 0;
            if !a.is_const() {
                t.set_pvar(out.idx, k, pa.idx);
                k += 1;
            }
            if !b.is_const() {
                t.set_pvar(out.idx, k, pb.idx);
            }
        });
    }
    out
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_const() {
            write!(f, "Var({:?})", self.val)
        } else {
            write!(f, "Var({:?} @{})", self.val, self.idx)
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.val, f)
    }
}

impl Default for Var {
    fn default() -> Self {
        Var::cst(0.0)
    }
}

impl From<f64> for Var {
    fn from(x: f64) -> Self {
        Var::cst(x)
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

// ---- arithmetic -------------------------------------------------------

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, b: Var) -> Var {
        if self.is_const() && b.is_const() {
            return Var::cst(self.val + b.val);
        }
        record(self.val + b.val, [(self, 1.0, NONE), (b, 1.0, NONE)]).0
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, b: Var) -> Var {
        if self.is_const() && b.is_const() {
            return Var::cst(self.val - b.val);
        }
        record(self.val - b.val, [(self, 1.0, NONE), (b, -1.0, NONE)]).0
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, b: Var) -> Var {
        if self.is_const() && b.is_const() {
            return Var::cst(self.val * b.val);
        }
        // The partials are the operands themselves.
        record(self.val * b.val, [(self, b.val, b.idx), (b, self.val, self.idx)]).0
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, b: Var) -> Var {
        let val = self.val / b.val;
        if b.is_const() {
            let r = 1.0 / b.val;
            return unary(self, val, r, |_, _| Var::cst(r));
        }
        binary(self, b, val, 1.0 / b.val, -val / b.val, |_, b, out| {
            (b.recip(), -(out / b))
        })
    }
}

impl Rem for Var {
    type Output = Var;
    fn rem(self, b: Var) -> Var {
        let val = self.val % b.val;
        let q = (self.val / b.val).trunc();
        binary(self, b, val, 1.0, -q, move |_, _, _| {
            (Var::cst(1.0), Var::cst(-q))
        })
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        if self.is_const() {
            return Var::cst(-self.val);
        }
        record(-self.val, [(self, -1.0, NONE)]).0
    }
}

macro_rules! mixed_ops {
    ($($tr:ident $f:ident $atr:ident $af:ident),*) => {$(
        impl $tr<f64> for Var {
            type Output = Var;
            #[inline]
            fn $f(self, b: f64) -> Var { self.$f(Var::cst(b)) }
        }
        impl $tr<Var> for f64 {
            type Output = Var;
            #[inline]
            fn $f(self, b: Var) -> Var { Var::cst(self).$f(b) }
        }
        impl $atr for Var {
            #[inline]
            fn $af(&mut self, b: Var) { *self = (*self).$f(b); }
        }
        impl $atr<f64> for Var {
            #[inline]
            fn $af(&mut self, b: f64) { *self = (*self).$f(Var::cst(b)); }
        }
    )*};
}

mixed_ops!(
    Add add AddAssign add_assign,
    Sub sub SubAssign sub_assign,
    Mul mul MulAssign mul_assign,
    Div div DivAssign div_assign,
    Rem rem RemAssign rem_assign
);

impl Sum for Var {
    fn sum<I: Iterator<Item = Var>>(iter: I) -> Var {
        let v: Vec<Var> = iter.collect();
        <Var as Scalar>::sum_of(&v)
    }
}

impl<'a> Sum<&'a Var> for Var {
    fn sum<I: Iterator<Item = &'a Var>>(iter: I) -> Var {
        let v: Vec<Var> = iter.copied().collect();
        <Var as Scalar>::sum_of(&v)
    }
}

impl Product for Var {
    fn product<I: Iterator<Item = Var>>(iter: I) -> Var {
        iter.fold(Var::cst(1.0), |a, b| a * b)
    }
}

// ---- num-traits -------------------------------------------------------

impl Zero for Var {
    fn zero() -> Self {
        Var::cst(0.0)
    }
    fn is_zero(&self) -> bool {
        self.val == 0.0
    }
}

impl One for Var {
    fn one() -> Self {
        Var::cst(1.0)
    }
}

impl Num for Var {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Var::cst)
    }
}

impl ToPrimitive for Var {
    fn to_i64(&self) -> Option<i64> {
        self.val.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.val.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.val)
    }
    fn to_f32(&self) -> Option<f32> {
        self.val.to_f32()
    }
}

impl NumCast for Var {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Var::cst)
    }
}

macro_rules! consts {
    ($($name:ident),*) => {
        $( fn $name() -> Self { Var::cst(<f64 as FloatConst>::$name()) } )*
    };
}

impl FloatConst for Var {
    consts!(
        E, FRAC_1_PI, FRAC_1_SQRT_2, FRAC_2_PI, FRAC_2_SQRT_PI, FRAC_PI_2, FRAC_PI_3,
        FRAC_PI_4, FRAC_PI_6, FRAC_PI_8, LN_10, LN_2, LOG10_E, LOG2_E, PI, SQRT_2, TAU,
        LOG10_2, LOG2_10
    );
}

impl Float for Var {
    fn nan() -> Self {
        Var::cst(f64::NAN)
    }
    fn infinity() -> Self {
        Var::cst(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Var::cst(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Var::cst(-0.0)
    }
    fn min_value() -> Self {
        Var::cst(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Var::cst(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        Var::cst(f64::EPSILON)
    }
    fn max_value() -> Self {
        Var::cst(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.val.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.val.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.val.is_finite()
    }
    fn is_normal(self) -> bool {
        self.val.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.val.classify()
    }
    fn floor(self) -> Self {
        Var::cst(self.val.floor())
    }
    fn ceil(self) -> Self {
        Var::cst(self.val.ceil())
    }
    fn round(self) -> Self {
        Var::cst(self.val.round())
    }
    fn trunc(self) -> Self {
        Var::cst(self.val.trunc())
    }
    fn fract(self) -> Self {
        unary(self, self.val.fract(), 1.0, |_, _| Var::cst(1.0))
    }
    fn abs(self) -> Self {
        let s = if self.val < 0.0 { -1.0 } else { 1.0 };
        unary(self, self.val.abs(), s, move |_, _| Var::cst(s))
    }
    fn signum(self) -> Self {
        Var::cst(self.val.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.val.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.val.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        let val = 1.0 / self.val;
        unary(self, val, -val * val, |_, out| -(out * out))
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Var::cst(1.0),
            1 => self,
            2 => self * self,
            _ => unary(
                self,
                self.val.powi(n),
                n as f64 * self.val.powi(n - 1),
                move |a, _| a.powi(n - 1) * n as f64,
            ),
        }
    }
    fn powf(self, n: Self) -> Self {
        let val = self.val.powf(n.val);
        if n.is_const() {
            let e = n.val;
            return unary(self, val, e * self.val.powf(e - 1.0), move |a, _| {
                a.powf(Var::cst(e - 1.0)) * e
            });
        }
        let ln_a = if self.val > 0.0 { self.val.ln() } else { 0.0 };
        binary(
            self,
            n,
            val,
            n.val * self.val.powf(n.val - 1.0),
            val * ln_a,
            |a, n, out| {
                let la = if a.val > 0.0 { a.ln() } else { Var::cst(0.0) };
                (n * a.powf(n - 1.0), out * la)
            },
        )
    }
    fn sqrt(self) -> Self {
        let val = self.val.sqrt();
        unary(self, val, 0.5 / val, |_, out| 0.5 / out)
    }
    fn exp(self) -> Self {
        let val = self.val.exp();
        unary(self, val, val, |_, out| out)
    }
    fn exp2(self) -> Self {
        let val = self.val.exp2();
        let l = std::f64::consts::LN_2;
        unary(self, val, l * val, move |_, out| out * l)
    }
    fn ln(self) -> Self {
        unary(self, self.val.ln(), 1.0 / self.val, |a, _| a.recip())
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.ln() * std::f64::consts::LOG2_E
    }
    fn log10(self) -> Self {
        self.ln() * std::f64::consts::LOG10_E
    }
    fn max(self, other: Self) -> Self {
        if self.val.is_nan() || other.val > self.val {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if self.val.is_nan() || other.val < self.val {
            other
        } else {
            self
        }
    }
    #[allow(deprecated)]
    fn abs_sub(self, other: Self) -> Self {
        (self - other).max(Var::cst(0.0))
    }
    fn cbrt(self) -> Self {
        let val = self.val.cbrt();
        unary(self, val, 1.0 / (3.0 * val * val), |_, out| {
            (out * out * 3.0).recip()
        })
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn sin(self) -> Self {
        unary(self, self.val.sin(), self.val.cos(), |a, _| a.cos())
    }
    fn cos(self) -> Self {
        unary(self, self.val.cos(), -self.val.sin(), |a, _| -a.sin())
    }
    fn tan(self) -> Self {
        let val = self.val.tan();
        unary(self, val, 1.0 + val * val, |_, out| out * out + 1.0)
    }
    fn asin(self) -> Self {
        let d = 1.0 / (1.0 - self.val * self.val).sqrt();
        unary(self, self.val.asin(), d, |a, _| (1.0 - a * a).sqrt().recip())
    }
    fn acos(self) -> Self {
        let d = -1.0 / (1.0 - self.val * self.val).sqrt();
        unary(self, self.val.acos(), d, |a, _| -(1.0 - a * a).sqrt().recip())
    }
    fn atan(self) -> Self {
        let d = 1.0 / (1.0 + self.val * self.val);
        unary(self, self.val.atan(), d, |a, _| (a * a + 1.0).recip())
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = self.val * self.val + x.val * x.val;
        binary(
            self,
            x,
            self.val.atan2(x.val),
            x.val / r2,
            -self.val / r2,
            |y, x, _| {
                let r2 = y * y + x * x;
                (x / r2, -(y / r2))
            },
        )
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        let val = self.val.exp_m1();
        unary(self, val, val + 1.0, |_, out| out + 1.0)
    }
    fn ln_1p(self) -> Self {
        unary(self, self.val.ln_1p(), 1.0 / (1.0 + self.val), |a, _| {
            (a + 1.0).recip()
        })
    }
    fn sinh(self) -> Self {
        unary(self, self.val.sinh(), self.val.cosh(), |a, _| a.cosh())
    }
    fn cosh(self) -> Self {
        unary(self, self.val.cosh(), self.val.sinh(), |a, _| a.sinh())
    }
    fn tanh(self) -> Self {
        let val = self.val.tanh();
        unary(self, val, 1.0 - val * val, |_, out| 1.0 - out * out)
    }
    fn asinh(self) -> Self {
        let d = 1.0 / (self.val * self.val + 1.0).sqrt();
        unary(self, self.val.asinh(), d, |a, _| (a * a + 1.0).sqrt().recip())
    }
    fn acosh(self) -> Self {
        let d = 1.0 / (self.val * self.val - 1.0).sqrt();
        unary(self, self.val.acosh(), d, |a, _| (a * a - 1.0).sqrt().recip())
    }
    fn atanh(self) -> Self {
        let d = 1.0 / (1.0 - self.val * self.val);
        unary(self, self.val.atanh(), d, |a, _| (1.0 - a * a).recip())
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.val.integer_decode()
    }
}

// ---- fused nodes ------------------------------------------------------

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for Var {
    #[inline]
    fn cst(x: f64) -> Self {
        Var::cst(x)
    }

    #[inline]
    fn val(self) -> f64 {
        self.val
    }

    fn dot(a: &[Var], b: &[Var]) -> Var {
        debug_assert_eq!(a.len(), b.len());
        let mut val = 0.0;
        let mut any = false;
        for (x, y) in a.iter().zip(b) {
            val += x.val * y.val;
            any |= !x.is_const() || !y.is_const();
        }
        if !any {
            return Var::cst(val);
        }
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let idx = t.push_dot(a, b);
            Var {
                val,
                idx,
                gen: t.gen,
            }
        })
    }

    fn lin_comb(coeffs: &[f64], xs: &[Var]) -> Var {
        debug_assert_eq!(coeffs.len(), xs.len());
        let mut val = 0.0;
        let mut any = false;
        for (c, x) in coeffs.iter().zip(xs) {
            val += c * x.val;
            any |= !x.is_const();
        }
        if !any {
            return Var::cst(val);
        }
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let edges = coeffs
                .iter()
                .zip(xs)
                .filter(|(_, x)| !x.is_const())
                .map(|(&c, x)| (x.idx, c, NONE));
            let idx = t.push(edges);
            Var {
                val,
                idx,
                gen: t.gen,
            }
        })
    }

    fn sum_of(xs: &[Var]) -> Var {
        let val: f64 = xs.iter().map(|x| x.val).sum();
        if xs.iter().all(|x| x.is_const()) {
            return Var::cst(val);
        }
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let edges = xs
                .iter()
                .filter(|x| !x.is_const())
                .map(|x| (x.idx, 1.0, NONE));
            let idx = t.push(edges);
            Var {
                val,
                idx,
                gen: t.gen,
            }
        })
    }

    fn sigmoid(self) -> Var {
        let s = stable_sigmoid(self.val);
        unary(self, s, s * (1.0 - s), |_, out| out * (1.0 - out))
    }

    fn silu(self) -> Var {
        let x = self.val;
        let s = stable_sigmoid(x);
        unary(self, x * s, s * (1.0 + x * (1.0 - s)), |a, _| {
            let s = a.sigmoid();
            s * (a * (1.0 - s) + 1.0)
        })
    }

    fn softplus(self) -> Var {
        let x = self.val;
        let val = if x > 0.0 {
            x + (-x).exp().ln_1p()
        } else {
            x.exp().ln_1p()
        };
        unary(self, val, stable_sigmoid(x), |a, _| a.sigmoid())
    }
}
