use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters, with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    /// Number of updates applied so far.
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl OptimState {
    pub fn new(params: &ModelParams, weight_decay: f64) -> Self {
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: ModelParams::zeros(&params.config),
            v: ModelParams::zeros(&params.config),
        }
    }

    /// One AdamW update: `p -= lr·wd·p`, then the bias-corrected Adam step.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::invalid(format!("learning rate {lr} must be finite and non-negative")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, decay) = (self.beta1, self.beta2, self.eps, lr * self.weight_decay);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, (_, g)), (m, v)) in tensors {
            let slots = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
            for ((p, &g), (m, v)) in slots {
                *p -= decay * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at
/// `total` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl Schedule {
    pub fn at(&self, step: usize) -> f64 {
        lr_at(step, self.peak, self.warmup, self.total)
    }
}

/// Learning rate for zero-based `step`.
pub fn lr_at(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let decay_len = (total - warmup) as f64;
    peak * (total - step) as f64 / decay_len
}
