use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, KernelError, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 2e-5, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Cosine decay from `max_lr` at step 0 to 0 at `total`.
pub fn cosine_lr(step: usize, total: usize, max_lr: f64) -> f64 {
    if total == 0 {
        return max_lr;
    }
    let t = step.min(total) as f64 / total as f64;
    0.5 * max_lr * (1.0 + (std::f64::consts::PI * t).cos())
}

/// AdamW with decoupled weight decay. Moments are created lazily per
/// parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    steps: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, steps: 0, moments: HashMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<(), KernelError> {
        let lr = self.config.lr;
        self.step_with_lr(store, grads, lr)
    }

    /// Validates every gradient before touching the store, so a rejected
    /// call leaves parameters and moments unchanged.
    pub fn step_with_lr(&mut self, store: &mut ParameterStore, grads: &Gradients, lr: f64) -> Result<(), KernelError> {
        for (name, g) in grads {
            let p = store.get(name)?;
            if !p.trainable {
                return Err(KernelError::FrozenGradient(name.clone()));
            }
            if g.len() != p.tensor.len() {
                return Err(KernelError::Shape(format!("gradient for {name} has {} values, parameter {}", g.len(), p.tensor.len())));
            }
            if !g.is_finite() {
                return Err(KernelError::NonFinite(format!("gradient for {name}")));
            }
        }
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            let n = g.len();
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * c.weight_decay * *w;
                *w -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
