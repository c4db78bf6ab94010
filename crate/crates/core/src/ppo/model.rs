use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{PolicyCache, PolicyConfig, PolicyNet, PolicyOutput, RecurrentState};
use crate::error::{Error, Result};
use crate::extractor::{ExtractorCache, ExtractorConfig, FeatureExtractor, StateWindow};
use crate::nn::{Checkpoint, ParamTensor, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub policy_hidden: usize,
    pub n_actions: usize,
}

impl ModelConfig {
    /// Extractor window 30, extractor width 128 and policy hidden size 512.
    pub fn for_stocks(n_stocks: usize) -> Self {
        Self {
            extractor: ExtractorConfig::for_state_dim(crate::env::state_dim(n_stocks)),
            policy_hidden: 512,
            n_actions: n_stocks,
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            feature_dim: self.extractor.feature_dim,
            hidden: self.policy_hidden,
            n_actions: self.n_actions,
        }
    }
}

/// Feature extractor cascaded into the recurrent actor-critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub config: ModelConfig,
    pub extractor: FeatureExtractor,
    pub policy: PolicyNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticOutput {
    pub features: Vec<f64>,
    pub policy: PolicyOutput,
}

#[derive(Debug, Clone)]
pub struct ActorCriticCache {
    extractor: ExtractorCache,
    policy: PolicyCache,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        Self {
            config,
            extractor: FeatureExtractor::new(config.extractor, rng),
            policy: PolicyNet::new(config.policy(), rng),
        }
    }

    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            config,
            extractor: FeatureExtractor::zeros(config.extractor),
            policy: PolicyNet::zeros(config.policy()),
        }
    }

    pub fn initial_state(&self) -> RecurrentState {
        self.policy.initial_state()
    }

    pub fn forward(&self, window: &StateWindow, state: &RecurrentState) -> Result<(ActorCriticOutput, ActorCriticCache)> {
        let (features, extractor) = self.extractor.forward(window)?;
        let (policy_out, policy) = self.policy.forward(&features, state)?;
        Ok((
            ActorCriticOutput {
                features,
                policy: policy_out,
            },
            ActorCriticCache { extractor, policy },
        ))
    }

    pub fn act(&self, window: &StateWindow, state: &RecurrentState) -> Result<ActorCriticOutput> {
        self.forward(window, state).map(|(o, _)| o)
    }

    pub fn backward(&mut self, cache: &ActorCriticCache, d_mean: &[f64], d_log_std: &[f64], d_value: f64) -> Result<()> {
        let d_features = self.policy.backward(&cache.policy, d_mean, d_log_std, d_value)?;
        self.extractor.backward(&cache.extractor, &d_features)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(self)
    }

    /// Restores parameters; architecture must match.
    pub fn load_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        checkpoint.load_into(self)?;
        if !self.all_finite() {
            return Err(Error::Checkpoint("checkpoint holds non-finite parameters".into()));
        }
        Ok(())
    }
}

impl Parameterized for ActorCritic {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.extractor.params();
        v.extend(self.policy.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.extractor.params_mut();
        v.extend(self.policy.params_mut());
        v
    }
}
