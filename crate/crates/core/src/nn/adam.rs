use serde::{Deserialize, Serialize};

use super::ParamTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moment buffers are created on the first step and
/// must keep matching the parameter list afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, mut params: Vec<&mut ParamTensor>) -> Result<()> {
        for p in &params {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::shape("parameters matching optimizer state", "different parameter layout"));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for j in 0..p.values.len() {
                let g = p.grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.values[j] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all gradients.
pub fn global_grad_norm(params: &[&mut ParamTensor]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut ParamTensor], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(name: &str, values: Vec<f64>, grad: Vec<f64>) -> ParamTensor {
        let mut p = ParamTensor::from_values(name, &[values.len()], values).unwrap();
        p.grad = grad;
        p
    }

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let mut p = tensor("w", vec![1.0, -2.0], vec![0.0, 0.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(vec![&mut p]).unwrap();
        assert_eq!(p.values, vec![1.0, -2.0]);
    }

    #[test]
    fn single_step_matches_scalar_formula() {
        let cfg = AdamConfig::default();
        let (x0, g) = (0.37, -1.9);
        let mut p = tensor("w", vec![x0], vec![g]);
        Adam::new(cfg).step(vec![&mut p]).unwrap();
        let m = (1.0 - cfg.beta1) * g;
        let v = (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        let expected = x0 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        assert!((p.values[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_update_approaches_lr() {
        let cfg = AdamConfig::default();
        let mut p = tensor("w", vec![0.0, 0.0], vec![0.5, -3.0]);
        let mut adam = Adam::new(cfg);
        let mut last = p.values.clone();
        for _ in 0..500 {
            adam.step(vec![&mut p]).unwrap();
            let upd: Vec<f64> = p.values.iter().zip(&last).map(|(a, b)| a - b).collect();
            assert!((upd[0] + cfg.learning_rate).abs() < 1e-9);
            assert!((upd[1] - cfg.learning_rate).abs() < 1e-9);
            last = p.values.clone();
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = tensor("policy.actor.weight", vec![0.0], vec![f64::NAN]);
        match Adam::new(AdamConfig::default()).step(vec![&mut p]) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "policy.actor.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clip_examples() {
        let mut a = tensor("a", vec![0.0; 2], vec![0.3, 0.0]);
        let mut ps = vec![&mut a];
        assert_eq!(clip_grad_norm(&mut ps, 0.5), 0.3);
        assert_eq!(ps[0].grad, vec![0.3, 0.0]);

        let mut b = tensor("b", vec![0.0; 2], vec![3.0, 4.0]);
        let mut ps = vec![&mut b];
        assert_eq!(clip_grad_norm(&mut ps, 0.5), 5.0);
        assert!((global_grad_norm(&ps) - 0.5).abs() < 1e-12);

        let mut c = tensor("c", vec![0.0; 3], vec![1.0, -2.0, 0.5]);
        let mut d = tensor("d", vec![0.0; 2], vec![7.0, 0.25]);
        let mut ps = vec![&mut c, &mut d];
        let before: f64 = [1.0f64, -2.0, 0.5, 7.0, 0.25].iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!((clip_grad_norm(&mut ps, 0.5) - before).abs() < 1e-12);
        let after: f64 = ps.iter().flat_map(|p| p.grad.iter()).map(|g| g * g).sum::<f64>().sqrt();
        assert!((after - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn constant_gradient_update_bounded_by_lr(g in -1e3f64..1e3, steps in 1usize..60) {
            let cfg = AdamConfig::default();
            let mut p = tensor("w", vec![0.0], vec![g]);
            let mut adam = Adam::new(cfg);
            let mut last = 0.0;
            for _ in 0..steps {
                adam.step(vec![&mut p]).unwrap();
                prop_assert!((p.values[0] - last).abs() <= cfg.learning_rate * (1.0 + 1e-9));
                last = p.values[0];
            }
        }
    }
}
