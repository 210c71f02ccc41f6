//! Outer-loop optimizers for the initialization vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(
    params: &[f64],
    grad: &[f64],
    state: &AdamState,
    cfg: &AdamConfig,
) -> (Vec<f64>, AdamState) {
    assert_eq!(params.len(), grad.len(), "parameter/gradient length mismatch");
    let mut next = if state.m.len() == params.len() {
        state.clone()
    } else {
        AdamState::zeros(params.len())
    };
    next.t += 1;
    let t = next.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut out = params.to_vec();
    for i in 0..params.len() {
        next.m[i] = cfg.beta1 * next.m[i] + (1.0 - cfg.beta1) * grad[i];
        next.v[i] = cfg.beta2 * next.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = next.m[i] / bc1;
        let v_hat = next.v[i] / bc2;
        out[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    (out, next)
}

/// Plain gradient step `params - lr * grad`.
pub fn sgd_update(params: &[f64], grad: &[f64], learning_rate: f64) -> Vec<f64> {
    params
        .iter()
        .zip(grad)
        .map(|(p, g)| p - learning_rate * g)
        .collect()
}
