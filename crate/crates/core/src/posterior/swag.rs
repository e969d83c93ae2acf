use super::PosteriorError;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Running first and second moments of collected weights plus the last
/// `max_rank` deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwagState {
    pub mean: Vec<f64>,
    pub sq_mean: Vec<f64>,
    pub devs: VecDeque<Vec<f64>>,
    pub n_collected: usize,
    pub max_rank: usize,
}

impl SwagState {
    pub fn new(dim: usize, max_rank: usize) -> Self {
        SwagState {
            mean: vec![0.0; dim],
            sq_mean: vec![0.0; dim],
            devs: VecDeque::new(),
            n_collected: 0,
            max_rank,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Equal-weight running means; the deviation is taken against the
    /// updated mean.
    pub fn collect(&mut self, theta: &[f64]) -> Result<(), PosteriorError> {
        if theta.len() != self.dim() {
            return Err(PosteriorError::ShapeError(format!(
                "snapshot has {} entries, state {}",
                theta.len(),
                self.dim()
            )));
        }
        self.n_collected += 1;
        let n = self.n_collected as f64;
        for ((m, s), &t) in self.mean.iter_mut().zip(&mut self.sq_mean).zip(theta) {
            *m += (t - *m) / n;
            *s += (t * t - *s) / n;
        }
        if self.max_rank > 0 {
            let dev = theta.iter().zip(&self.mean).map(|(t, m)| t - m).collect();
            self.devs.push_back(dev);
            while self.devs.len() > self.max_rank {
                self.devs.pop_front();
            }
        }
        Ok(())
    }

    /// `diag(θ²̄ − θ_SWA²)`, clamped at zero.
    pub fn diag_var(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.sq_mean)
            .map(|(m, s)| (s - m * m).max(0.0))
            .collect()
    }

    pub fn is_ready(&self) -> bool {
        self.n_collected >= 2 && self.devs.len() >= 2
    }

    /// `θ_SWA + √(½Σ_diag) ⊙ z₁ + D z₂ / √(2(K'−1))`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>, PosteriorError> {
        if !self.is_ready() {
            return Err(PosteriorError::NotReady(format!(
                "SWAG has {} snapshots and {} deviations, needs 2 of each",
                self.n_collected,
                self.devs.len()
            )));
        }
        let diag = self.diag_var();
        let mut out: Vec<f64> = self
            .mean
            .iter()
            .zip(&diag)
            .map(|(m, d)| {
                let z: f64 = rng.sample(StandardNormal);
                m + (0.5 * d).sqrt() * z
            })
            .collect();
        let k = self.devs.len() as f64;
        let scale = 1.0 / (2.0 * (k - 1.0)).sqrt();
        for dev in &self.devs {
            let z: f64 = rng.sample(StandardNormal);
            for (o, d) in out.iter_mut().zip(dev) {
                *o += scale * z * d;
            }
        }
        Ok(out)
    }
}
