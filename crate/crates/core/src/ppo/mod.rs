//! PPO with an LSTM actor-critic on top of the feature extractor.

mod model;
mod policy;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

pub use model::{ActorCritic, ActorCriticCache, ActorCriticOutput, ModelConfig};
pub use policy::{PolicyCache, PolicyConfig, PolicyNet, PolicyOutput, RecurrentState};
pub use trainer::{
    minibatch_loss, sample_action, train, update, write_train_log, LossBreakdown, PpoTrainer,
    SampledAction, TrainOutcome, Transition, UpdateStats,
};

/// Largest log-ratio accepted before the ratio is capped at `e^20`.
pub const RATIO_LOG_CAP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub gamma: f64,
    /// Environment steps collected between updates.
    pub update_frequency: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub clip_range: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub normalize_advantages: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            update_frequency: 128,
            value_coef: 0.5,
            entropy_coef: 0.01,
            clip_range: 0.2,
            max_grad_norm: 0.5,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 10,
            minibatch_size: 32,
            normalize_advantages: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if !(self.clip_range > 0.0) {
            return Err(Error::Config("clip range must be positive".into()));
        }
        if self.update_frequency == 0 || self.minibatch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("update frequency, epochs and minibatch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config("learning rate must be >= 0 and max grad norm > 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Probability ratio `exp(new - old)`, capped at `e^RATIO_LOG_CAP`.
pub fn ratio(log_prob_new: f64, log_prob_old: f64) -> f64 {
    (log_prob_new - log_prob_old).min(RATIO_LOG_CAP).exp()
}

/// Pessimistic clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// One-step TD advantage `R + gamma * v_next * (1 - done) - v`.
pub fn advantage(reward: f64, value: f64, next_value: f64, done: bool, gamma: f64) -> f64 {
    td_target(reward, next_value, done, gamma) - value
}

/// Critic regression target `R + gamma * v_next * (1 - done)`.
pub fn td_target(reward: f64, next_value: f64, done: bool, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_value
    }
}

/// Standardises to zero mean and unit (population) standard deviation.
/// Batches of one or with zero spread are only centred.
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len();
    if n == 0 {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / n as f64;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for a in advantages.iter_mut() {
        *a -= mean;
        if n > 1 && std > 0.0 {
            *a /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio(-1.7, -1.7), 1.0);
        assert!((ratio(0.3 + std::f64::consts::LN_2, 0.3) - 2.0).abs() < 1e-12);
        assert_eq!(ratio(100.0, 0.0), RATIO_LOG_CAP.exp());
    }

    #[test]
    fn clipped_objective_examples() {
        assert_eq!(clipped_objective(1.5, 1.0, 0.2), 1.2);
        assert_eq!(clipped_objective(0.5, -1.0, 0.2), -0.8);
        for a in [-3.0, 0.0, 0.25, 7.0] {
            assert_eq!(clipped_objective(1.0, a, 0.2), a);
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(0.0, 0.4, 0.4, false, 1.0), 0.0);
        assert_eq!(advantage(0.7, 0.2, 99.0, true, 0.99), 0.7 - 0.2);
        let a = advantage(0.0099, 0.1, 0.12, false, 0.99);
        assert!((a - 0.0287).abs() < 1e-12);
    }

    #[test]
    fn hyperparam_defaults() {
        let h = Hyperparams::default();
        assert_eq!(
            (h.gamma, h.update_frequency, h.value_coef, h.entropy_coef, h.clip_range, h.max_grad_norm, h.learning_rate),
            (0.99, 128, 0.5, 0.01, 0.2, 0.5, 3e-4)
        );
        assert!(h.validate().is_ok());
        assert!(Hyperparams { gamma: 0.0, ..h }.validate().is_err());
        assert!(Hyperparams { clip_range: 0.0, ..h }.validate().is_err());
    }

    proptest! {
        #[test]
        fn clipped_objective_is_pessimistic(r in 0.0f64..5.0, a in -10.0f64..10.0, eps in 0.01f64..0.9) {
            let obj = clipped_objective(r, a, eps);
            prop_assert!(obj <= r * a + 1e-12);
            if a > 0.0 {
                prop_assert!(obj <= (1.0 + eps) * a + 1e-12);
            }
        }

        #[test]
        fn normalized_batch_is_standard(xs in prop::collection::vec(-100.0f64..100.0, 2..200)) {
            let mut a = xs.clone();
            normalize_advantages(&mut a);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-6 {
                let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((std - 1.0).abs() < 1e-9);
            }
        }
    }
}
