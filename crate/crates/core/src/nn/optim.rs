use super::params::ParamSet;
use super::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates. Moments are kept per
/// parameter, in [`ParamSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of steps taken so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the accumulated gradients. Frozen parameters
    /// and their moments are left untouched.
    pub fn step(&mut self, params: &mut ParamSet) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let g = p.grad.data();
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(trainable: bool, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(1.0), trainable).unwrap();
        ps.get_mut(id).grad = Tensor::scalar(grad);
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = single(true, 0.0);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        adam.step(&mut ps);
        assert_eq!(ps.iter().next().unwrap().value.item(), 1.0);
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut ps = single(false, 3.0);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        adam.step(&mut ps);
        assert_eq!(ps.iter().next().unwrap().value.item(), 1.0);
        assert_eq!(adam.m[0].item(), 0.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = single(true, 1.0);
        let config = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(config, &ps);
        adam.step(&mut ps);
        let moved = ps.iter().next().unwrap().value.item() - 1.0;
        assert!((moved + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }
}
