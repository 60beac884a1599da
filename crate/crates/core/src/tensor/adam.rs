//! Adam optimizer.

use crate::error::{Error, Result};

use super::params::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state: first/second moment buffers per parameter plus a step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            config,
            m,
            v,
            step_count: 0,
        }
    }

    /// One update over all trainable parameters. Requires every trainable
    /// parameter's gradient accumulator to be populated.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer state covers {} parameters, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for slot in 0..params.len() {
            let p = params.get(slot);
            if p.trainable && p.grad.is_none() {
                return Err(Error::UninitializedGrad(format!(
                    "parameter {} has no gradient; call zero_grads + backward first",
                    p.name
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for slot in 0..params.len() {
            let p = params.get_mut(slot);
            if !p.trainable {
                continue;
            }
            let grad = p.grad.as_ref().unwrap();
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..p.data.len() {
                let g = grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
