use super::PosteriorError;
use crate::numeric::mat3::{self, Mat3};

/// Moment-matched summary of a Gaussian mixture with equal weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// `aleatoric + epistemic`
    pub total_var: f64,
    /// mean of member variances
    pub aleatoric_var: f64,
    /// variance of member means
    pub epistemic_var: f64,
}

/// `μ* = mean μ_m`, `σ*² = mean(σ_m² + μ_m²) − μ*²`, evaluated as
/// `mean σ_m² + mean (μ_m − μ*)²`.
pub fn de_aggregate(members: &[(f64, f64)]) -> Result<Aggregate, PosteriorError> {
    if members.is_empty() {
        return Err(PosteriorError::NoData);
    }
    let n = members.len() as f64;
    let mean = members.iter().map(|m| m.0).sum::<f64>() / n;
    let aleatoric_var = members.iter().map(|m| m.1).sum::<f64>() / n;
    let epistemic_var = members.iter().map(|m| (m.0 - mean).powi(2)).sum::<f64>() / n;
    Ok(Aggregate {
        mean,
        total_var: aleatoric_var + epistemic_var,
        aleatoric_var,
        epistemic_var,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovAggregate {
    pub mean: [f64; 3],
    pub total: Mat3<f64>,
    pub aleatoric: Mat3<f64>,
    pub epistemic: Mat3<f64>,
}

/// Multivariate moment matching: `Σ* = mean(Σ_m + μ_m μ_mᵀ) − μ* μ*ᵀ`,
/// again split into mean covariance plus covariance of means.
pub fn de_aggregate_cov(members: &[([f64; 3], Mat3<f64>)]) -> Result<CovAggregate, PosteriorError> {
    if members.is_empty() {
        return Err(PosteriorError::NoData);
    }
    let n = members.len() as f64;
    let mut mean = [0.0; 3];
    for (mu, _) in members {
        for k in 0..3 {
            mean[k] += mu[k];
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let mut alea = mat3::zeros::<f64>();
    let mut epi = mat3::zeros::<f64>();
    for (mu, s) in members {
        for a in 0..3 {
            for b in 0..3 {
                alea[a][b] += s[a][b];
                epi[a][b] += (mu[a] - mean[a]) * (mu[b] - mean[b]);
            }
        }
    }
    for a in 0..3 {
        for b in 0..3 {
            alea[a][b] /= n;
            epi[a][b] /= n;
        }
    }
    let mut total = alea;
    for a in 0..3 {
        for b in 0..3 {
            total[a][b] += epi[a][b];
        }
    }
    Ok(CovAggregate {
        mean,
        total,
        aleatoric: alea,
        epistemic: epi,
    })
}
