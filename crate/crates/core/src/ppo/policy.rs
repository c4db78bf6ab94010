use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, LinearCache, LstmCell, LstmStepCache, ParamTensor, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
}

/// LSTM `(h, c)` carried between consecutive environment steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
    pub next: RecurrentState,
}

#[derive(Debug, Clone)]
pub struct PolicyCache {
    lstm: LstmStepCache,
    actor: LinearCache,
    critic: LinearCache,
}

/// Recurrent actor-critic: one LSTM step over the features, a linear head
/// for Gaussian means, free log-std parameters and a linear value head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    pub lstm: LstmCell,
    pub actor: Linear,
    pub log_std: ParamTensor,
    pub critic: Linear,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Self {
        Self {
            config,
            lstm: LstmCell::init("policy.lstm", config.feature_dim, config.hidden, rng),
            actor: Linear::orthogonal("policy.actor", config.hidden, config.n_actions, 0.01, rng),
            log_std: ParamTensor::zeros("policy.log_std", &[config.n_actions]),
            critic: Linear::orthogonal("policy.critic", config.hidden, 1, 1.0, rng),
        }
    }

    pub fn zeros(config: PolicyConfig) -> Self {
        Self {
            config,
            lstm: LstmCell::zeros("policy.lstm", config.feature_dim, config.hidden),
            actor: Linear::zeros("policy.actor", config.hidden, config.n_actions),
            log_std: ParamTensor::zeros("policy.log_std", &[config.n_actions]),
            critic: Linear::zeros("policy.critic", config.hidden, 1),
        }
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.config.hidden)
    }

    pub fn forward(&self, features: &[f64], state: &RecurrentState) -> Result<(PolicyOutput, PolicyCache)> {
        let (h, c, lstm) = self.lstm.step(features, &state.h, &state.c)?;
        let (mean, actor) = self.actor.forward(&h)?;
        let (value, critic) = self.critic.forward(&h)?;
        let out = PolicyOutput {
            mean,
            log_std: self.log_std.values.clone(),
            value: value[0],
            next: RecurrentState { h, c },
        };
        if !(out.value.is_finite() && out.mean.iter().chain(&out.log_std).all(|v| v.is_finite())) {
            return Err(Error::Numerical("policy produced a non-finite output".into()));
        }
        Ok((out, PolicyCache { lstm, actor, critic }))
    }

    /// Accumulates gradients and returns the gradient on the input features.
    pub fn backward(&mut self, cache: &PolicyCache, d_mean: &[f64], d_log_std: &[f64], d_value: f64) -> Result<Vec<f64>> {
        if d_log_std.len() != self.config.n_actions {
            return Err(Error::shape(self.config.n_actions, d_log_std.len()));
        }
        let mut dh = self.actor.backward(&cache.actor, d_mean)?;
        for (a, b) in dh.iter_mut().zip(self.critic.backward(&cache.critic, &[d_value])?) {
            *a += b;
        }
        for (g, d) in self.log_std.grad.iter_mut().zip(d_log_std) {
            *g += d;
        }
        let dc = vec![0.0; self.config.hidden];
        let (dx, _, _) = self.lstm.step_backward(&cache.lstm, &dh, &dc);
        Ok(dx)
    }
}

impl Parameterized for PolicyNet {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.lstm.params();
        v.extend(self.actor.params());
        v.push(&self.log_std);
        v.extend(self.critic.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.lstm.params_mut();
        v.extend(self.actor.params_mut());
        v.push(&mut self.log_std);
        v.extend(self.critic.params_mut());
        v
    }
}
