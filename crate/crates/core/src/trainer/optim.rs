//! AdamW with decoupled weight decay, and the warmup schedule.

use super::TrainConfig;
use crate::error::{Error, Result};

/// Linear ramp from 0 to `lr_base` over `warmup_steps`, then constant.
/// Steps are 1-based.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step == 0 || step > cfg.total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside 1..={}",
            cfg.total_steps
        )));
    }
    if step < cfg.warmup_steps {
        Ok(cfg.lr_base * step as f64 / cfg.warmup_steps as f64)
    } else {
        Ok(cfg.lr_base)
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update of every tensor in `params` from the matching `grads`.
    /// The tensor list must keep the same order and shapes across calls.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let decay = 1.0 - lr * self.weight_decay;
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] *= decay;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
