//! AdamW with decoupled weight decay and a multi-step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// `lr(epoch) = base · gamma^(number of milestones ≤ epoch)`, epochs 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 1e-3,
            milestones: vec![100, 1000, 2500],
            gamma: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.gamma.powi(drops as i32)
    }
}

/// One AdamW update of a flat tensor. `t` is the 1-based step count.
pub fn adamw_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, cfg: &AdamWConfig) {
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta[i]);
    }
}

/// Moments for every tensor of a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams, config: AdamWConfig, lr: f64) -> Self {
        Self {
            config,
            lr,
            step: 0,
            m: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Updates every unfrozen tensor that has a gradient. Frozen tensors get
    /// neither the gradient step nor weight decay. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                actual: grads.len(),
            });
        }
        for (t, g) in params.tensors().iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != t.len() {
                    return Err(Error::ShapeMismatch {
                        name: t.name().to_string(),
                        expected: vec![t.len()],
                        actual: vec![g.len()],
                    });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(t.name().to_string()));
                }
            }
        }
        self.step += 1;
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if t.is_frozen() {
                continue;
            }
            if let Some(g) = &grads[i] {
                adamw_update(t.data_mut(), g, &mut self.m[i], &mut self.v[i], self.step, self.lr, &self.config);
            }
        }
        Ok(())
    }
}
