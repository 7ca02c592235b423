//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::net::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment estimates, one pair per parameter tensor in network
/// visit order.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

/// One Adam update from the currently accumulated gradients.
pub fn adam_step(network: &mut Network, state: &mut AdamState, config: &AdamConfig) {
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);

    let mut slot = 0usize;
    for layer in network.layers.iter_mut() {
        for (param, grad) in layer.params() {
            if state.moments.len() <= slot {
                state.moments.push((vec![0.0; param.len()], vec![0.0; param.len()]));
            }
            let (m, v) = &mut state.moments[slot];
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
            slot += 1;
        }
    }
}
