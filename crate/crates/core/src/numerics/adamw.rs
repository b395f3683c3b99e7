use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamWState {
    pub fn new(params: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }
}

/// Applies one AdamW update to every parameter, then clears gradients.
pub fn adamw_step(params: &mut ParamStore, state: &mut AdamWState) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::usage("optimizer state does not match parameter store"));
    }
    if let Some((name, _)) = params.iter().find(|(_, p)| p.grad().is_none()) {
        return Err(Error::usage(format!("parameter {name:?} has no gradient")));
    }
    let AdamWConfig {
        lr,
        weight_decay,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2_sqrt = (1.0 - beta2.powi(t)).sqrt();
    let step = lr / bc1;
    let decay = 1.0 - lr * weight_decay;
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let g = p.take_grad().expect("checked above");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            *w *= decay;
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let denom = v[j].sqrt() / bc2_sqrt + eps;
            *w -= step * m[j] / denom;
        }
        if p.data().iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("adamw_step"));
        }
    }
    Ok(())
}
