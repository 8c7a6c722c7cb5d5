//! Adam with bias correction and L2 weight decay folded into the gradient.

use std::collections::HashSet;

use crate::real::Real;
use crate::tensor::Tensor;

use super::ParamRegistry;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient; lambda * param is added to each gradient before the update.
    pub lambda: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, lambda: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda,
        }
    }
}

pub struct AdamState<R: Real> {
    pub config: AdamConfig,
    pub step: u64,
    /// First/second moment buffers, aligned with registry order.
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
    warned_missing: HashSet<String>,
}

impl<R: Real> AdamState<R> {
    pub fn new(config: AdamConfig, params: &ParamRegistry<R>) -> Self {
        let zeros: Vec<Tensor<R>> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
            warned_missing: HashSet::new(),
        }
    }

    /// Restores moment buffers (checkpoint load).
    pub fn from_parts(config: AdamConfig, step: u64, m: Vec<Tensor<R>>, v: Vec<Tensor<R>>) -> Self {
        AdamState {
            config,
            step,
            m,
            v,
            warned_missing: HashSet::new(),
        }
    }

    /// One Adam update. `grads[i]` pairs with registry slot `i`; a missing
    /// gradient is treated as zero and logged once per parameter name.
    pub fn step(&mut self, params: &mut ParamRegistry<R>, grads: &[Option<Tensor<R>>]) {
        assert_eq!(grads.len(), params.len(), "gradient slot count mismatch");
        self.step += 1;
        let t = self.step;
        let c = self.config;
        let (b1, b2) = (R::from_f64_lossy(c.beta1), R::from_f64_lossy(c.beta2));
        let lr = R::from_f64_lossy(c.lr);
        let eps = R::from_f64_lossy(c.epsilon);
        let lambda = R::from_f64_lossy(c.lambda);
        let bias1 = R::from_f64_lossy(1.0 - c.beta1.powi(t as i32));
        let bias2 = R::from_f64_lossy(1.0 - c.beta2.powi(t as i32));

        for i in 0..params.len() {
            if grads[i].is_none() {
                let name = params.name_at(i).to_string();
                if self.warned_missing.insert(name.clone()) {
                    log::warn!("no gradient for parameter '{}', treating as zero", name);
                }
            }
            let p = params.tensor_at_mut(i);
            let n = p.numel();
            for e in 0..n {
                let g0 = grads[i].as_ref().map_or(R::zero(), |g| g.data()[e]);
                let g = g0 + lambda * p.data()[e];
                let m = b1 * self.m[i].data()[e] + (R::one() - b1) * g;
                let v = b2 * self.v[i].data()[e] + (R::one() - b2) * g * g;
                self.m[i].data_mut()[e] = m;
                self.v[i].data_mut()[e] = v;
                let mhat = m / bias1;
                let vhat = v / bias2;
                p.data_mut()[e] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(p0: f64) -> ParamRegistry<f64> {
        let mut reg = ParamRegistry::new();
        reg.insert("p", Tensor::scalar(p0));
        reg
    }

    #[test]
    fn zero_gradient_zero_moments_leaves_param_unchanged() {
        let mut reg = single_param(1.5);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.0), &reg);
        adam.step(&mut reg, &[Some(Tensor::scalar(0.0))]);
        assert_eq!(reg.get("p").unwrap().data()[0], 1.5);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // p=1, g=1, lr=0.1: bias-corrected mhat=1, vhat=1, so p -> ~0.9.
        let mut reg = single_param(1.0);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.0), &reg);
        adam.step(&mut reg, &[Some(Tensor::scalar(1.0))]);
        let p = reg.get("p").unwrap().data()[0];
        assert!((p - 0.9).abs() < 1e-6, "p = {}", p);
    }

    #[test]
    fn two_updates_advance_step_and_keep_second_moment_positive() {
        let mut reg = single_param(1.0);
        let mut adam = AdamState::new(AdamConfig::new(0.01, 0.0), &reg);
        adam.step(&mut reg, &[Some(Tensor::scalar(1.0))]);
        adam.step(&mut reg, &[Some(Tensor::scalar(1.0))]);
        assert_eq!(adam.step, 2);
        assert!(adam.v[0].data()[0] > 0.0);
    }

    #[test]
    fn missing_gradient_still_applies_l2() {
        let mut reg = single_param(1.0);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.01), &reg);
        adam.step(&mut reg, &[None]);
        // With lambda > 0 the decay term alone moves the parameter down.
        assert!(reg.get("p").unwrap().data()[0] < 1.0);
    }
}
