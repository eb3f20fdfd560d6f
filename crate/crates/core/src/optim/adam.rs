//! Bias-corrected Adam.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam step on `param`. A non-finite gradient entry aborts before
/// anything is modified.
pub fn adam_update(name: &str, param: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "{name}: parameter, gradient and state sizes differ ({}, {}, {})",
            param.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some((index, value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite {
            param: name.to_string(),
            index,
            value: *value,
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
