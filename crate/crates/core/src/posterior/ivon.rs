use super::PosteriorError;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvonHyper {
    /// learning rate α
    pub lr: f64,
    pub beta1: f64,
    /// Hessian averaging rate ρ
    pub rho: f64,
    /// weight decay δ
    pub delta: f64,
    /// effective sample size λ
    pub ess: f64,
    /// initial Hessian estimate
    pub hess_init: f64,
}

impl Default for IvonHyper {
    fn default() -> Self {
        IvonHyper {
            lr: 0.1,
            beta1: 0.9,
            rho: 1e-5,
            delta: 1e-4,
            ess: 1e4,
            hess_init: 0.1,
        }
    }
}

impl IvonHyper {
    pub fn validate(&self) -> Result<(), PosteriorError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.rho > 0.0
            && self.rho <= 1.0
            && self.delta > 0.0
            && self.ess > 0.0
            && self.hess_init >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(PosteriorError::BadHyper(format!("{self:?}")))
        }
    }
}

/// Diagonal Gaussian `N(m, diag σ²)` with `σ = 1/√(λ(h + δ))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvonState {
    pub m: Vec<f64>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub hyper: IvonHyper,
    pub t: u64,
}

impl IvonState {
    pub fn new(m: Vec<f64>, hyper: IvonHyper) -> Self {
        let n = m.len();
        IvonState {
            h: vec![hyper.hess_init; n],
            g: vec![0.0; n],
            m,
            hyper,
            t: 0,
        }
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.h
            .iter()
            .map(|h| 1.0 / (self.hyper.ess * (h + self.hyper.delta)).sqrt())
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.m
            .iter()
            .zip(self.sigma())
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    }

    /// One update: draw `θ ~ q`, then [`IvonState::step_at`].
    pub fn step<R, F>(&mut self, rng: &mut R, grad: F) -> Result<(), PosteriorError>
    where
        R: Rng + ?Sized,
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        let theta = self.sample(rng);
        let g = grad(&theta);
        self.step_at(&theta, &g)
    }

    /// Update from a given sample `θ` and its loss gradient `ĝ`:
    /// `ĥ = ĝ (θ − m)/σ²`, momentum on `g`, the Riemannian `h` update,
    /// bias correction, the mean step and `σ` recomputed from `h`.
    pub fn step_at(&mut self, theta: &[f64], ghat: &[f64]) -> Result<(), PosteriorError> {
        let n = self.m.len();
        if theta.len() != n || ghat.len() != n {
            return Err(PosteriorError::ShapeError("IVON sample/gradient length".into()));
        }
        if ghat.iter().any(|v| !v.is_finite()) {
            return Err(PosteriorError::DivergedGradient(self.t + 1));
        }
        let IvonHyper {
            lr,
            beta1,
            rho,
            delta,
            ess,
            ..
        } = self.hyper;
        self.t += 1;
        let bc = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        for k in 0..n {
            let s2 = 1.0 / (ess * (self.h[k] + delta));
            let hhat = ghat[k] * (theta[k] - self.m[k]) / s2;
            self.g[k] = beta1 * self.g[k] + (1.0 - beta1) * ghat[k];
            let h = self.h[k];
            self.h[k] =
                (1.0 - rho) * h + rho * hhat + 0.5 * rho * rho * (h - hhat) * (h - hhat) / (h + delta);
            let gbar = self.g[k] / bc;
            self.m[k] -= lr * (gbar + delta * self.m[k]) / (self.h[k] + delta);
        }
        Ok(())
    }
}
