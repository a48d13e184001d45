use serde::{Deserialize, Serialize};

use super::graph::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub max_grad_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: 0.0 }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(ps: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = || ps.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update from the gradients accumulated in `ps`. The caller
    /// zeroes gradients.
    pub fn step(&mut self, ps: &mut ParamStore) -> Result<()> {
        if ps.len() != self.m.len() {
            return Err(Error::shape("optimizer_step", format!("{} params, {} moment buffers", ps.len(), self.m.len())));
        }
        let mut sq = 0.0;
        for p in ps.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
            sq += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
        let c = self.config;
        let clip = if c.max_grad_norm > 0.0 && sq.sqrt() > c.max_grad_norm { c.max_grad_norm / sq.sqrt() } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, m), v) in ps.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let decay = if p.decay { 1.0 - c.lr * c.weight_decay } else { 1.0 };
            for i in 0..p.grad.len() {
                let g = p.grad[i] * clip;
                p.value.data[i] *= decay;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value.data[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn single(value: f64, grad: f64, decay: bool) -> ParamStore {
        let mut ps = ParamStore::new();
        let id = ps.add("p", Tensor::scalar(value), decay);
        ps.get_mut(id).grad[0] = grad;
        ps
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut ps = single(1.25, 0.0, true);
        let mut opt = AdamW::new(&ps, AdamWConfig { lr: 0.1, ..Default::default() });
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.iter().next().unwrap().value.item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = single(2.0, 1.0, true);
        let mut opt = AdamW::new(&ps, AdamWConfig { lr: 0.1, ..Default::default() });
        opt.step(&mut ps).unwrap();
        // mhat = 1, vhat = 1 -> p -= 0.1 / (1 + 1e-8)
        let p = ps.iter().next().unwrap().value.item();
        assert!((p - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut ps = single(3.0, 0.0, true);
        let mut opt = AdamW::new(&ps, AdamWConfig { lr: 0.01, weight_decay: 0.5, ..Default::default() });
        opt.step(&mut ps).unwrap();
        assert!((ps.iter().next().unwrap().value.item() - 3.0 * (1.0 - 0.01 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut ps = single(1.0, f64::NAN, true);
        let mut opt = AdamW::new(&ps, AdamWConfig::default());
        assert!(matches!(opt.step(&mut ps), Err(Error::NonFinite(_))));
    }
}
