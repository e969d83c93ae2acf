//! Training objectives: squared error, the energy Gaussian NLL and the
//! joint energy–force NLL. All generic over [`Scalar`] so the same code
//! produces values, tape gradients and finite-difference oracles.
//!
//! Parameter-independent constants (`ln 2π` terms) are dropped.

use crate::geometry::AtomicStructure;
use crate::numeric::mat3::{self, Mat3};
use crate::numeric::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("variance or covariance outside its domain ({0})")]
    DomainError(f64),
    #[error("structure {0} has no energy/force labels")]
    MissingLabel(usize),
    #[error("prediction {0} lacks the variance heads this loss needs")]
    MissingHead(usize),
    #[error("loss weights must be non-negative and not both zero")]
    BadWeights,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_e: f64,
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_e: 1.0,
            lambda_f: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_e: f64, lambda_f: f64) -> Result<Self, LossError> {
        let w = LossWeights { lambda_e, lambda_f };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if ok(self.lambda_e) && ok(self.lambda_f) && self.lambda_e + self.lambda_f > 0.0 {
            Ok(())
        } else {
            Err(LossError::BadWeights)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    NllE,
    NllJef,
}

/// Model output for one structure, in whatever scalar type the loss runs on.
#[derive(Clone, Debug)]
pub struct StructurePrediction<S> {
    pub energy: S,
    pub energy_var: Option<S>,
    pub forces: Vec<[S; 3]>,
    pub force_cov: Option<Vec<Mat3<S>>>,
}

/// `½ ln σ² + (y − μ)² / (2σ²)`.
pub fn nll_gaussian<S: Scalar>(y: f64, mu: S, var: S) -> Result<S, LossError> {
    if !(var.val() > 0.0) {
        return Err(LossError::DomainError(var.val()));
    }
    let r = S::cst(y) - mu;
    Ok(S::cst(0.5) * (var.ln() + r * r / var))
}

/// `(y − μ)ᵀ Σ⁻¹ (y − μ)` and `ln det Σ` through the Cholesky factor.
pub fn mahalanobis_logdet<S: Scalar>(
    y: [f64; 3],
    mu: [S; 3],
    sigma: &Mat3<S>,
) -> Result<(S, S), LossError> {
    let l = mat3::cholesky(sigma).ok_or(LossError::DomainError(sigma[0][0].val()))?;
    let r: [S; 3] = std::array::from_fn(|k| S::cst(y[k]) - mu[k]);
    // forward substitution L z = r
    let mut z = [S::zero(); 3];
    for i in 0..3 {
        let mut acc = r[i];
        for j in 0..i {
            acc -= l[i][j] * z[j];
        }
        z[i] = acc / l[i][i];
    }
    let maha = S::dot(&z, &z);
    let logdet = S::cst(2.0) * (l[0][0].ln() + l[1][1].ln() + l[2][2].ln());
    Ok((maha, logdet))
}

/// `(y − μ)ᵀ Σ⁻¹ (y − μ) + ln det Σ`.
pub fn force_nll<S: Scalar>(y: [f64; 3], mu: [S; 3], sigma: &Mat3<S>) -> Result<S, LossError> {
    let (m, d) = mahalanobis_logdet(y, mu, sigma)?;
    Ok(m + d)
}

fn labels(s: &AtomicStructure, k: usize) -> Result<(f64, &[[f64; 3]]), LossError> {
    match (s.energy, &s.forces) {
        (Some(e), Some(f)) => Ok((e, f)),
        _ => Err(LossError::MissingLabel(k)),
    }
}

fn check_batch<S>(data: &[&AtomicStructure], preds: &[StructurePrediction<S>]) -> Result<(), LossError> {
    if data.len() != preds.len() || data.is_empty() {
        return Err(LossError::ShapeMismatch(format!(
            "{} structures, {} predictions",
            data.len(),
            preds.len()
        )));
    }
    for (k, (s, p)) in data.iter().zip(preds).enumerate() {
        if p.forces.len() != s.n_atoms() {
            return Err(LossError::ShapeMismatch(format!("structure {k}: force count")));
        }
    }
    Ok(())
}

fn sq_force_error<S: Scalar>(y: &[[f64; 3]], mu: &[[S; 3]]) -> S {
    let d: Vec<S> = y
        .iter()
        .zip(mu)
        .flat_map(|(a, b)| (0..3).map(move |k| S::cst(a[k]) - b[k]))
        .collect();
    S::dot(&d, &d)
}

fn mean<S: Scalar>(terms: &[S]) -> S {
    S::sum_of(terms) / S::cst(terms.len() as f64)
}

/// Per structure `λ_E (y_E − μ_E)² + λ_F Σ_atoms |y_F − μ_F|²`, averaged
/// over the batch.
pub fn mse_loss<S: Scalar>(
    data: &[&AtomicStructure],
    preds: &[StructurePrediction<S>],
    w: LossWeights,
) -> Result<S, LossError> {
    check_batch(data, preds)?;
    let mut terms = Vec::with_capacity(data.len());
    for (k, (s, p)) in data.iter().zip(preds).enumerate() {
        let (e, f) = labels(s, k)?;
        let r = S::cst(e) - p.energy;
        terms.push(S::cst(w.lambda_e) * r * r + S::cst(w.lambda_f) * sq_force_error(f, &p.forces));
    }
    Ok(mean(&terms))
}

/// Energy likelihood with forces on squared error (the joint loss with
/// `Σ ≡ I`): `λ_E (y_E − μ_E)²/σ_E² + ln σ_E² + λ_F Σ_atoms |y_F − μ_F|²`.
pub fn nll_e_loss<S: Scalar>(
    data: &[&AtomicStructure],
    preds: &[StructurePrediction<S>],
    w: LossWeights,
) -> Result<S, LossError> {
    check_batch(data, preds)?;
    let mut terms = Vec::with_capacity(data.len());
    for (k, (s, p)) in data.iter().zip(preds).enumerate() {
        let (e, f) = labels(s, k)?;
        let var = p.energy_var.ok_or(LossError::MissingHead(k))?;
        if !(var.val() > 0.0) {
            return Err(LossError::DomainError(var.val()));
        }
        let r = S::cst(e) - p.energy;
        terms.push(
            S::cst(w.lambda_e) * r * r / var
                + var.ln()
                + S::cst(w.lambda_f) * sq_force_error(f, &p.forces),
        );
    }
    Ok(mean(&terms))
}

/// Joint energy–force NLL. Per structure
/// `λ_E (y_E − μ_E)²/σ_E² + λ_F Σ_i (y_i − μ_i)ᵀ Σ_i⁻¹ (y_i − μ_i) + ln σ_E² + Σ_i ln det Σ_i`,
/// averaged over the batch.
pub fn nll_jef<S: Scalar>(
    data: &[&AtomicStructure],
    preds: &[StructurePrediction<S>],
    w: LossWeights,
) -> Result<S, LossError> {
    check_batch(data, preds)?;
    let mut terms = Vec::with_capacity(data.len());
    for (k, (s, p)) in data.iter().zip(preds).enumerate() {
        let (e, f) = labels(s, k)?;
        let var = p.energy_var.ok_or(LossError::MissingHead(k))?;
        let covs = p.force_cov.as_ref().ok_or(LossError::MissingHead(k))?;
        if !(var.val() > 0.0) {
            return Err(LossError::DomainError(var.val()));
        }
        let r = S::cst(e) - p.energy;
        let mut maha = Vec::with_capacity(f.len());
        let mut logdet = Vec::with_capacity(f.len());
        for ((y, mu), c) in f.iter().zip(&p.forces).zip(covs) {
            let (m, d) = mahalanobis_logdet(*y, *mu, c)?;
            maha.push(m);
            logdet.push(d);
        }
        terms.push(
            S::cst(w.lambda_e) * r * r / var
                + S::cst(w.lambda_f) * S::sum_of(&maha)
                + var.ln()
                + S::sum_of(&logdet),
        );
    }
    Ok(mean(&terms))
}

pub fn loss<S: Scalar>(
    kind: LossKind,
    data: &[&AtomicStructure],
    preds: &[StructurePrediction<S>],
    w: LossWeights,
) -> Result<S, LossError> {
    match kind {
        LossKind::Mse => mse_loss(data, preds, w),
        LossKind::NllE => nll_e_loss(data, preds, w),
        LossKind::NllJef => nll_jef(data, preds, w),
    }
}
