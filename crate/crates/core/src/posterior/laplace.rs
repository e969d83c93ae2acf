use super::PosteriorError;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// One datum's contribution `J Λ Jᵀ`: Jacobian rows (one per network
/// output, one column per parameter of the subset) and a block-diagonal
/// likelihood curvature `Λ = −∇²_f log p(y|f)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GgnTerm {
    pub jac: Vec<Vec<f64>>,
    /// `(first output row, dense k×k block)`
    pub blocks: Vec<(usize, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceState {
    pub theta_map: Vec<f64>,
    /// indices into the parameter vector the posterior covers
    pub subset: Vec<usize>,
    pub ggn_diag: Vec<f64>,
    pub prior_precision: f64,
}

/// Diagonal of `Σ_n J_n Λ_n J_nᵀ` over the parameter subset.
pub fn ggn_diagonal(n_params: usize, terms: &[GgnTerm]) -> Result<Vec<f64>, PosteriorError> {
    let mut diag = vec![0.0; n_params];
    for t in terms {
        for (start, blk) in &t.blocks {
            let k = (blk.len() as f64).sqrt().round() as usize;
            if k * k != blk.len() || start + k > t.jac.len() {
                return Err(PosteriorError::ShapeError("GGN block".into()));
            }
            for (p, d) in diag.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..k {
                    let ja = t.jac[start + a][p];
                    if ja == 0.0 {
                        continue;
                    }
                    for b in 0..k {
                        acc += ja * blk[a * k + b] * t.jac[start + b][p];
                    }
                }
                *d += acc;
            }
        }
    }
    Ok(diag)
}

pub fn laplace_fit(
    theta_map: Vec<f64>,
    subset: Vec<usize>,
    terms: &[GgnTerm],
    prior_precision: f64,
) -> Result<LaplaceState, PosteriorError> {
    if terms.is_empty() {
        return Err(PosteriorError::NoData);
    }
    if !(prior_precision > 0.0) {
        return Err(PosteriorError::BadHyper(format!("prior precision {prior_precision}")));
    }
    if subset.iter().any(|&i| i >= theta_map.len()) {
        return Err(PosteriorError::ShapeError("subset index out of range".into()));
    }
    if terms.iter().any(|t| t.jac.iter().any(|r| r.len() != subset.len())) {
        return Err(PosteriorError::ShapeError("Jacobian width".into()));
    }
    let ggn_diag = ggn_diagonal(subset.len(), terms)?;
    Ok(LaplaceState {
        theta_map,
        subset,
        ggn_diag,
        prior_precision,
    })
}

impl LaplaceState {
    /// Posterior variances of the subset parameters.
    pub fn variances(&self) -> Vec<f64> {
        self.ggn_diag
            .iter()
            .map(|g| 1.0 / (g + self.prior_precision))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = self.theta_map.clone();
        for (&i, v) in self.subset.iter().zip(self.variances()) {
            let z: f64 = rng.sample(StandardNormal);
            theta[i] += v.sqrt() * z;
        }
        theta
    }
}
