//! Adam with bias correction and either decoupled weight decay or an
//! inverse-time learning-rate decay.

use alloc::vec;
use alloc::vec::Vec;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `θ ← θ (1 - lr·d)` before each Adam update.
    WeightDecay,
    /// `lr_t = lr / (1 + d·(t - 1))`.
    InverseTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, decay: 1e-3, decay_mode: DecayMode::WeightDecay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config("invalid Adam hyper-parameters"))
        }
    }
}

/// First and second moment accumulators, one vector per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_params(params: &[&[f64]]) -> Self {
        Self::new(&params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }
}

pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptimState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("parameter, gradient and state counts differ"));
    }
    if params.iter().zip(grads).zip(&state.m).any(|((p, g), m)| p.len() != g.len() || p.len() != m.len()) {
        return Err(Error::shape("parameter and gradient shapes differ"));
    }
    state.step += 1;
    let t = state.step as f64;
    let (lr, shrink) = match cfg.decay_mode {
        DecayMode::WeightDecay => (cfg.lr, 1.0 - cfg.lr * cfg.decay),
        DecayMode::InverseTime => (cfg.lr / (1.0 + cfg.decay * (t - 1.0)), 1.0),
    };
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] * shrink - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
