use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clstm_core::env::{EnvConfig, TurbulencePolicy};
use clstm_core::market::TurbulenceParams;
use clstm_core::ppo::Hyperparams;
use clstm_core::strategy::StrategyParams;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Everything a run needs. Every field has a default, so an empty file is a
/// valid config for the default model and protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub strategy: String,
    pub data: DataConfig,
    pub env: EnvSection,
    pub model: ModelSection,
    pub ppo: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw OHLCV CSVs, one or many tickers each.
    pub files: Vec<PathBuf>,
    /// A panel written by `ingest`; when set, `files` is ignored by train and backtest.
    pub panel: Option<PathBuf>,
    /// Tickers to keep; empty keeps all.
    pub tickers: Vec<String>,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    /// Last day of the initial training range.
    pub train_end: NaiveDate,
    pub stride_months: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub initial_capital: f64,
    pub h_max: u32,
    pub cost_rate: f64,
    pub reward_scale: f64,
    pub turbulence_policy: TurbulencePolicy,
    pub turbulence_lookback: usize,
    pub risk_free_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub window: usize,
    pub lstm_hidden: usize,
    pub feature_dim: usize,
    pub policy_hidden: usize,
    /// Environment steps per training run or retrain window.
    pub train_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("out"),
            strategy: "clstm-ppo".into(),
            data: DataConfig::default(),
            env: EnvSection::default(),
            model: ModelSection::default(),
            ppo: Hyperparams::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            files: Vec::new(),
            panel: None,
            tickers: Vec::new(),
            start: NaiveDate::from_ymd_opt(2009, 1, 1),
            end: NaiveDate::from_ymd_opt(2020, 5, 8),
            train_end: NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date"),
            stride_months: 3,
        }
    }
}

impl Default for EnvSection {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            initial_capital: env.initial_capital,
            h_max: env.h_max,
            cost_rate: env.cost_rate,
            reward_scale: env.reward_scale,
            turbulence_policy: env.turbulence_policy,
            turbulence_lookback: TurbulenceParams::default().lookback,
            risk_free_rate: 0.0,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = StrategyParams::default();
        Self {
            window: p.window,
            lstm_hidden: p.lstm_hidden,
            feature_dim: p.feature_dim,
            policy_hidden: p.policy_hidden,
            train_steps: p.train_steps,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| UsageError("--seed is required for this command".into()).into())
    }

    pub fn env_config(&self, n_stocks: usize) -> EnvConfig {
        EnvConfig {
            initial_capital: self.env.initial_capital,
            h_max: self.env.h_max,
            cost_rate: self.env.cost_rate,
            reward_scale: self.env.reward_scale,
            turbulence_threshold: None,
            turbulence_policy: self.env.turbulence_policy,
            n_stocks,
        }
    }

    pub fn turbulence(&self) -> TurbulenceParams {
        TurbulenceParams {
            lookback: self.env.turbulence_lookback,
            ..TurbulenceParams::default()
        }
    }

    pub fn strategy_params(&self, seed: u64) -> StrategyParams {
        StrategyParams {
            window: self.model.window,
            lstm_hidden: self.model.lstm_hidden,
            feature_dim: self.model.feature_dim,
            policy_hidden: self.model.policy_hidden,
            hyper: self.ppo,
            train_steps: self.model.train_steps,
            seed,
        }
    }

    /// Writes the effective config next to the run's outputs.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = toml::to_string_pretty(self)?;
        fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}
