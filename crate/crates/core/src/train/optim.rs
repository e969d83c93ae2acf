use serde::{Deserialize, Serialize};

/// Adam with the running maximum of the second moment (AMSGrad), bias
/// corrected, no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Amsgrad {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    v_max: Vec<f64>,
    t: u64,
}

impl Amsgrad {
    pub fn new(dim: usize) -> Self {
        Amsgrad {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            v_max: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            self.v_max[i] = self.v_max[i].max(self.v[i]);
            let denom = (self.v_max[i] / bc2).sqrt() + self.eps;
            theta[i] -= lr * (self.m[i] / bc1) / denom;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    /// multiplicative decay, in (0, 1)
    pub factor: f64,
    /// non-improving epochs before a decay
    pub patience: usize,
    /// relative improvement that counts
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.9,
            patience: 50,
            threshold: 1e-4,
            min_lr: 0.0,
        }
    }
}

/// Reduce-on-plateau on a monitored loss (lower is better).
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub cfg: PlateauConfig,
    lr: f64,
    best: f64,
    bad: usize,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig, lr: f64) -> Self {
        Plateau {
            cfg,
            lr,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's monitored value and returns the learning rate
    /// for the next epoch.
    pub fn observe(&mut self, value: f64) -> f64 {
        if value < self.best * (1.0 - self.cfg.threshold) || self.best == f64::INFINITY {
            self.best = value;
            self.bad = 0;
        } else {
            self.bad += 1;
            if self.bad >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad = 0;
            }
        }
        self.lr
    }
}

/// Exponential moving average `a ← d a + (1 − d) θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema {
    pub decay: f64,
    pub avg: Vec<f64>,
}

impl Ema {
    pub fn new(decay: f64, init: &[f64]) -> Self {
        Ema {
            decay,
            avg: init.to_vec(),
        }
    }

    pub fn update(&mut self, theta: &[f64]) {
        let d = self.decay;
        for (a, t) in self.avg.iter_mut().zip(theta) {
            *a = d * *a + (1.0 - d) * t;
        }
    }
}
