use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for every trainable tensor of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = params.entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        Self {
            step: 0,
            cfg,
            v: m.clone(),
            m,
        }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update. `grads[i]` is `None` for tensors the loss did not touch,
    /// which are treated as zero gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::dim("optimizer parameter count", params.len(), grads.len()));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Training {
                        param: params.entry(i).name.clone(),
                        reason: "non-finite gradient".into(),
                    });
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            if !params.entry(i).trainable {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.as_ref().map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
