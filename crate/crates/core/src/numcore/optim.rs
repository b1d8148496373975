//! AdamW with a linear warmup / linear decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Fraction of `total_steps` spent warming up.
    pub warmup_fraction: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
        }
    }
}

/// Optimizer moments and step counter.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub hyper: AdamWConfig,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub step: usize,
    first: Vec<Array>,
    second: Vec<Array>,
}

impl OptimState {
    pub fn new(params: &ParamStore, hyper: AdamWConfig, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&hyper.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        let warmup_steps = (hyper.warmup_fraction * total_steps as f64).round() as usize;
        Ok(OptimState {
            hyper,
            total_steps,
            warmup_steps,
            step: 0,
            first: params.iter().map(|p| Array::zeros(p.value.shape())).collect(),
            second: params.iter().map(|p| Array::zeros(p.value.shape())).collect(),
        })
    }

    /// Learning rate applied at 1-based step `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let base = self.hyper.lr;
        let (s, w, t) = (step as f64, self.warmup_steps as f64, self.total_steps as f64);
        let factor = if self.warmup_steps == 0 {
            (t - s) / t
        } else if self.warmup_steps >= self.total_steps {
            s / w
        } else {
            (s / w).min((t - s) / (t - w))
        };
        base * factor.max(0.0)
    }

    /// Applies one decoupled-weight-decay Adam update using the gradients
    /// stored on `params`.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(Error::Config("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let lr = self.lr_at(self.step);
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let values = p.value.data_mut();
            let grads = p.grad.data();
            for (((x, &g), m), v) in values.iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
                *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *x -= lr * (mhat / (vhat.sqrt() + h.eps) + h.weight_decay * *x);
            }
        }
        Ok(())
    }
}

/// One AdamW update of `params` in place.
pub fn adamw_step(params: &mut ParamStore, state: &mut OptimState) -> Result<()> {
    state.step(params)
}
