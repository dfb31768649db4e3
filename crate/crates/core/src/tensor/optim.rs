//! Adam with bias correction, plus global gradient-norm clipping.

use super::{ParamSet, Tensor};

/// Adam optimizer state. One moment pair per parameter, allocated lazily on
/// the first step so the optimizer can be built before the parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update from the gradients currently stored in `params`.
    /// A parameter whose gradient has been exactly zero at every step so far
    /// is left bitwise unchanged (its moments are zero, so the update is 0.0).
    pub fn step(&mut self, params: &mut ParamSet) {
        if self.m.is_empty() {
            for (_, p) in params.iter() {
                self.m.push(Tensor::zeros(p.value.shape().to_vec()));
                self.v.push(Tensor::zeros(p.value.shape().to_vec()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let p = params.get_mut(super::ParamId(i));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.value.len() {
                let g = p.grad.data()[k];
                let mk = self.beta1 * m.data()[k] + (1.0 - self.beta1) * g;
                let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let mhat = mk / bc1;
                let vhat = vk / bc2;
                p.value.data_mut()[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, p) in params.iter() {
        for g in p.grad.data() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for i in 0..params.len() {
            let p = params.get_mut(super::ParamId(i));
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
