//! Adam optimizer over a [`ParameterSet`].

use crate::array::Array;
use crate::params::ParameterSet;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array>,
    v: Vec<Array>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParameterSet, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step along `grads` (one per parameter, in set order).
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[Array]) {
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match parameters");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let (m, v, g) = (self.m[k].data_mut(), self.v[k].data_mut(), grads[k].data());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm of a gradient list.
pub fn grad_norm(grads: &[Array]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
