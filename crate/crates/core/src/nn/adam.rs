//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        adam_step(params, grads, self)
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], s: &mut AdamState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), s.m.len());
    s.step += 1;
    let bc1 = 1.0 - s.beta1.powi(s.step as i32);
    let bc2 = 1.0 - s.beta2.powi(s.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
        let mh = s.m[i] / bc1;
        let vh = s.v[i] / bc2;
        params[i] -= s.lr * mh / (vh.sqrt() + s.eps);
    }
}
