//! Trading agents behind one trait, looked up by name.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionVector, EnvConfig, MarketState, TradingEnv};
use crate::error::{Error, Result};
use crate::extractor::{normalize_state, ExtractorConfig, StateHistory, StateScales};
use crate::market::Panel;
use crate::nn::Checkpoint;
use crate::ppo::{
    sample_action, train, ActorCritic, Hyperparams, ModelConfig, PpoTrainer, RecurrentState, UpdateStats,
};

/// Settings shared by every registered strategy; each one reads what it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    /// Extractor window length.
    pub window: usize,
    pub lstm_hidden: usize,
    pub feature_dim: usize,
    pub policy_hidden: usize,
    pub hyper: Hyperparams,
    /// Environment steps per call to [`Strategy::fit`].
    pub train_steps: usize,
    pub seed: u64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            window: 30,
            lstm_hidden: 128,
            feature_dim: 128,
            policy_hidden: 512,
            hyper: Hyperparams::default(),
            train_steps: 30_000,
            seed: 0,
        }
    }
}

impl StrategyParams {
    pub fn model_config(&self, n_stocks: usize) -> ModelConfig {
        ModelConfig {
            extractor: ExtractorConfig {
                state_dim: crate::env::state_dim(n_stocks),
                lstm_hidden: self.lstm_hidden,
                feature_dim: self.feature_dim,
                window: self.window,
            },
            policy_hidden: self.policy_hidden,
            n_actions: n_stocks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.lstm_hidden == 0 || self.feature_dim == 0 || self.policy_hidden == 0 {
            return Err(Error::Config("network sizes and window must be positive".into()));
        }
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub steps: usize,
    pub log: Vec<UpdateStats>,
    pub divergence: Option<String>,
}

pub trait Strategy {
    fn name(&self) -> &str;

    /// Trains on panel dates `[from, to]`. Repeated calls continue from the
    /// current parameters.
    fn fit(&mut self, panel: &Panel, from: usize, to: usize, env_config: &EnvConfig) -> Result<FitReport>;

    /// Clears per-episode memory before a fresh run of decisions.
    fn begin_episode(&mut self);

    fn act(&mut self, state: &MarketState) -> Result<ActionVector>;

    /// Learned parameters; empty for strategies without any.
    fn checkpoint(&self) -> Checkpoint;

    fn load_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()>;
}

/// Cascaded LSTM extractor feeding a PPO-trained LSTM actor-critic.
pub struct ClstmPpo {
    params: StrategyParams,
    model: ActorCritic,
    trainer: PpoTrainer,
    /// Fixed at the first fit so inputs stay comparable across retrains.
    scales: Option<StateScales>,
    history: StateHistory,
    recurrent: RecurrentState,
    rng: ChaCha8Rng,
}

impl ClstmPpo {
    pub fn new(params: StrategyParams, n_stocks: usize) -> Result<Self> {
        params.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(params.seed);
        let model = ActorCritic::new(params.model_config(n_stocks), &mut init);
        Ok(Self {
            trainer: PpoTrainer::new(params.hyper, params.seed.wrapping_add(1))?,
            recurrent: model.initial_state(),
            history: StateHistory::new(params.window),
            model,
            params,
            scales: None,
            rng: ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(2)),
        })
    }

    pub fn model(&self) -> &ActorCritic {
        &self.model
    }

    pub fn scales(&self) -> Option<&StateScales> {
        self.scales.as_ref()
    }
}

impl fmt::Debug for ClstmPpo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClstmPpo")
            .field("params", &self.params)
            .field("updates", &self.trainer.updates)
            .finish_non_exhaustive()
    }
}

impl Strategy for ClstmPpo {
    fn name(&self) -> &str {
        "clstm-ppo"
    }

    fn fit(&mut self, panel: &Panel, from: usize, to: usize, env_config: &EnvConfig) -> Result<FitReport> {
        let scales = self
            .scales
            .get_or_insert_with(|| StateScales::from_panel(&panel.slice_dates(from, to + 1), env_config))
            .clone();
        // the gate is a trading-time control; training sees ungated dynamics
        let config = EnvConfig {
            turbulence_threshold: None,
            ..*env_config
        };
        let mut env = TradingEnv::new(panel, from, to, config)?;
        let outcome = train(&mut env, &scales, &mut self.model, &mut self.trainer, self.params.train_steps)?;
        Ok(FitReport {
            steps: outcome.steps,
            log: outcome.log,
            divergence: outcome.divergence,
        })
    }

    fn begin_episode(&mut self) {
        self.history.clear();
        self.recurrent = self.model.initial_state();
    }

    fn act(&mut self, state: &MarketState) -> Result<ActionVector> {
        let scales = self
            .scales
            .as_ref()
            .ok_or_else(|| Error::Contract("clstm-ppo must be fit before acting".into()))?;
        self.history.push(normalize_state(&state.as_vector(), scales)?);
        let out = self.model.act(&self.history.window()?, &self.recurrent)?;
        self.recurrent = out.policy.next.clone();
        let sampled = sample_action(&out.policy.mean, &out.policy.log_std, &mut self.rng, true);
        Ok(ActionVector::new(&sampled.action))
    }

    fn checkpoint(&self) -> Checkpoint {
        self.model.checkpoint()
    }

    fn load_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.model.load_checkpoint(checkpoint)
    }
}

/// Uniform random actions from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    n_stocks: usize,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(n_stocks: usize, seed: u64) -> Self {
        Self {
            n_stocks,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Strategy for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn fit(&mut self, _: &Panel, _: usize, _: usize, _: &EnvConfig) -> Result<FitReport> {
        Ok(FitReport::default())
    }

    fn begin_episode(&mut self) {}

    fn act(&mut self, _: &MarketState) -> Result<ActionVector> {
        let raw: Vec<f64> = (0..self.n_stocks).map(|_| self.rng.random_range(-1.0..=1.0)).collect();
        Ok(ActionVector::new(&raw))
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::default()
    }

    fn load_checkpoint(&mut self, _: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Emits the same action every day: all zeros holds cash, all ones keeps buying.
#[derive(Debug, Clone)]
pub struct ConstantAgent {
    name: &'static str,
    action: Vec<f64>,
}

impl ConstantAgent {
    pub fn hold(n_stocks: usize) -> Self {
        Self {
            name: "hold",
            action: vec![0.0; n_stocks],
        }
    }

    pub fn buy_max(n_stocks: usize) -> Self {
        Self {
            name: "buy-max",
            action: vec![1.0; n_stocks],
        }
    }
}

impl Strategy for ConstantAgent {
    fn name(&self) -> &str {
        self.name
    }

    fn fit(&mut self, _: &Panel, _: usize, _: usize, _: &EnvConfig) -> Result<FitReport> {
        Ok(FitReport::default())
    }

    fn begin_episode(&mut self) {}

    fn act(&mut self, _: &MarketState) -> Result<ActionVector> {
        Ok(ActionVector::new(&self.action))
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::default()
    }

    fn load_checkpoint(&mut self, _: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

pub type StrategyFactory = Box<dyn Fn(&StrategyParams, usize) -> Result<Box<dyn Strategy>> + Send + Sync>;

/// Name to constructor map.
pub struct StrategyRegistry {
    factories: BTreeMap<String, StrategyFactory>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `clstm-ppo`, `random`, `hold` and `buy-max`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("clstm-ppo", |p, n| Ok(Box::new(ClstmPpo::new(*p, n)?)));
        r.register("random", |p, n| Ok(Box::new(RandomAgent::new(n, p.seed))));
        r.register("hold", |_, n| Ok(Box::new(ConstantAgent::hold(n))));
        r.register("buy-max", |_, n| Ok(Box::new(ConstantAgent::buy_max(n))));
        r
    }

    /// Adds or replaces a factory.
    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&StrategyParams, usize) -> Result<Box<dyn Strategy>> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, params: &StrategyParams, n_stocks: usize) -> Result<Box<dyn Strategy>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy(format!("`{name}` (known: {})", self.names().join(", "))))?;
        factory(params, n_stocks)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategyRegistry").field("names", &self.names()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve_by_name() {
        let reg = StrategyRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["buy-max", "clstm-ppo", "hold", "random"]);
        let params = StrategyParams {
            window: 2,
            lstm_hidden: 3,
            feature_dim: 3,
            policy_hidden: 3,
            ..StrategyParams::default()
        };
        for name in reg.names() {
            assert_eq!(reg.create(name, &params, 2).unwrap().name(), name);
        }
        assert!(matches!(reg.create("nope", &params, 2), Err(Error::UnknownStrategy(_))));
    }

    #[test]
    fn custom_registration() {
        let mut reg = StrategyRegistry::empty();
        reg.register("flat", |_, n| Ok(Box::new(ConstantAgent::hold(n))));
        assert_eq!(reg.names(), vec!["flat"]);
    }

    #[test]
    fn random_agent_is_seeded_and_bounded() {
        let state = MarketState {
            date: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            balance: 1.0,
            prices: vec![1.0; 3],
            holdings: vec![0; 3],
            macd: vec![0.0; 3],
            rsi: vec![0.0; 3],
            cci: vec![0.0; 3],
            adx: vec![0.0; 3],
        };
        let mut a = RandomAgent::new(3, 4);
        let mut b = RandomAgent::new(3, 4);
        for _ in 0..20 {
            let x = a.act(&state).unwrap();
            assert_eq!(x, b.act(&state).unwrap());
            assert!(x.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
