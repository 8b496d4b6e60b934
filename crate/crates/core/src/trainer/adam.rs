//! Adaptive-moment gradient descent with bias correction.

use crate::network::Params;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second-moment accumulators for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Params,
    pub v: Params,
}

impl AdamState {
    pub fn new(like: &Params, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    /// One bias-corrected update step in place.
    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let scale = self.lr / bc1;
        let g_flat = grads.flat();
        let mut p_flat = params.flat_mut();
        let mut m_flat = self.m.flat_mut();
        let mut v_flat = self.v.flat_mut();
        for i in 0..g_flat.len() {
            let g = g_flat[i];
            let p = &mut p_flat[i];
            let m = &mut m_flat[i];
            let v = &mut v_flat[i];
            for j in 0..g.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                p[j] -= scale * m[j] / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
    }
}
