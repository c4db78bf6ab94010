//! Multi-stock trading MDP.
//!
//! State layout is `[balance, prices, holdings, macd, rsi, cci, adx]`, so a
//! 30-stock panel yields a 181-long vector. Orders execute at the state's
//! adjusted close: sells first, then buys in ticker order, each buy clipped to
//! what the remaining cash covers including the proportional cost.

mod ledger;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Panel;

pub use ledger::{
    read_equity_csv, read_trades_csv, write_equity_csv, write_trades_csv, EquityPoint, Side,
    TradeRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TurbulencePolicy {
    /// Sell every holding while the gate is active.
    #[default]
    Liquidate,
    /// Take no action while the gate is active.
    Freeze,
}

impl std::str::FromStr for TurbulencePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "liquidate" => Ok(Self::Liquidate),
            "freeze" => Ok(Self::Freeze),
            other => Err(Error::Config(format!("unknown turbulence policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub initial_capital: f64,
    pub h_max: u32,
    pub cost_rate: f64,
    pub reward_scale: f64,
    /// `None` disables the turbulence gate.
    pub turbulence_threshold: Option<f64>,
    pub turbulence_policy: TurbulencePolicy,
    pub n_stocks: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            initial_capital: 1_000_000.0,
            h_max: 100,
            cost_rate: 0.001,
            reward_scale: 1e-4,
            turbulence_threshold: None,
            turbulence_policy: TurbulencePolicy::Liquidate,
            n_stocks: 30,
        }
    }
}

impl EnvConfig {
    pub fn for_stocks(n_stocks: usize) -> Self {
        Self {
            n_stocks,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_capital > 0.0 && self.initial_capital.is_finite()) {
            return Err(Error::Config("initial_capital must be positive".into()));
        }
        if self.h_max < 1 {
            return Err(Error::Config("h_max must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.cost_rate) {
            return Err(Error::Config("cost_rate must lie in [0, 1)".into()));
        }
        if !self.reward_scale.is_finite() {
            return Err(Error::Config("reward_scale must be finite".into()));
        }
        if self.n_stocks == 0 {
            return Err(Error::Config("n_stocks must be positive".into()));
        }
        Ok(())
    }

    /// Length of the flattened state vector.
    pub fn state_dim(&self) -> usize {
        state_dim(self.n_stocks)
    }
}

pub fn state_dim(n_stocks: usize) -> usize {
    1 + 6 * n_stocks
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub date: NaiveDate,
    pub balance: f64,
    pub prices: Vec<f64>,
    pub holdings: Vec<u64>,
    pub macd: Vec<f64>,
    pub rsi: Vec<f64>,
    pub cci: Vec<f64>,
    pub adx: Vec<f64>,
}

impl MarketState {
    pub fn n_stocks(&self) -> usize {
        self.prices.len()
    }

    /// Flattened `[b, p, h, M, R, C, X]`.
    pub fn as_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(state_dim(self.n_stocks()));
        v.push(self.balance);
        v.extend_from_slice(&self.prices);
        v.extend(self.holdings.iter().map(|&h| h as f64));
        v.extend_from_slice(&self.macd);
        v.extend_from_slice(&self.rsi);
        v.extend_from_slice(&self.cci);
        v.extend_from_slice(&self.adx);
        v
    }

    pub fn portfolio_value(&self) -> f64 {
        self.balance + dot_holdings(&self.prices, &self.holdings)
    }
}

fn dot_holdings(prices: &[f64], holdings: &[u64]) -> f64 {
    prices.iter().zip(holdings).map(|(p, &h)| p * h as f64).sum()
}

/// Trade intents, each clamped into `[-1, 1]`. NaN components become 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector(Vec<f64>);

impl ActionVector {
    pub fn new(raw: &[f64]) -> Self {
        Self(
            raw.iter()
                .map(|&a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) })
                .collect(),
        )
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Share orders: `round(a * h_max)`, half away from zero.
    pub fn to_orders(&self, h_max: u32) -> Vec<i64> {
        self.0.iter().map(|a| (a * h_max as f64).round() as i64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Signed executed shares per ticker (negative = sold).
    pub executed: Vec<i64>,
    pub sells_value: f64,
    pub buys_value: f64,
    pub cost: f64,
    pub turbulence: Option<f64>,
    pub halted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: MarketState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One episode over an inclusive date-index range of a panel.
#[derive(Debug, Clone)]
pub struct TradingEnv<'a> {
    panel: &'a Panel,
    config: EnvConfig,
    start: usize,
    end: usize,
    t: usize,
    balance: f64,
    holdings: Vec<u64>,
    done: bool,
    trades: Vec<TradeRecord>,
}

impl<'a> TradingEnv<'a> {
    /// Environment over date indices `start..=end`.
    pub fn new(panel: &'a Panel, start: usize, end: usize, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        if config.n_stocks != panel.n_stocks() {
            return Err(Error::Config(format!(
                "config expects {} stocks, panel has {}",
                config.n_stocks,
                panel.n_stocks()
            )));
        }
        if end >= panel.n_dates() || start >= end {
            return Err(Error::Contract(format!(
                "episode range [{start}, {end}] must hold at least 2 of the panel's {} dates",
                panel.n_dates()
            )));
        }
        let n = panel.n_stocks();
        Ok(Self {
            panel,
            balance: config.initial_capital,
            config,
            start,
            end,
            t: start,
            holdings: vec![0; n],
            done: false,
            trades: Vec::new(),
        })
    }

    /// Environment over the calendar dates inside `[from, to]`.
    pub fn for_dates(panel: &'a Panel, from: NaiveDate, to: NaiveDate, config: EnvConfig) -> Result<Self> {
        let (start, end) = panel
            .index_range(from, to)
            .ok_or_else(|| Error::Contract(format!("no panel dates inside [{from}, {to}]")))?;
        Self::new(panel, start, end, config)
    }

    pub fn reset(&mut self) -> MarketState {
        let holdings = vec![0; self.panel.n_stocks()];
        self.reset_with(self.config.initial_capital, holdings)
            .expect("fresh portfolio is valid")
    }

    /// Starts the episode from an existing portfolio.
    pub fn reset_with(&mut self, balance: f64, holdings: Vec<u64>) -> Result<MarketState> {
        if holdings.len() != self.panel.n_stocks() {
            return Err(Error::shape(self.panel.n_stocks(), holdings.len()));
        }
        if !(balance >= 0.0 && balance.is_finite()) {
            return Err(Error::Contract(format!("invalid starting balance {balance}")));
        }
        self.t = self.start;
        self.balance = balance;
        self.holdings = holdings;
        self.done = false;
        self.trades.clear();
        Ok(self.state())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn panel(&self) -> &'a Panel {
        self.panel
    }

    pub fn date_index(&self) -> usize {
        self.t
    }

    pub fn date(&self) -> NaiveDate {
        self.panel.dates[self.t]
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn balance(&self) -> f64 {
        self.balance
    }

    pub fn holdings(&self) -> &[u64] {
        &self.holdings
    }

    /// Number of steps in one pass over the range.
    pub fn episode_len(&self) -> usize {
        self.end - self.start
    }

    pub fn portfolio_value(&self) -> f64 {
        self.balance + dot_holdings(&self.panel.adj_close[self.t], &self.holdings)
    }

    pub fn state(&self) -> MarketState {
        let t = self.t;
        let p = self.panel;
        MarketState {
            date: p.dates[t],
            balance: self.balance,
            prices: p.adj_close[t].clone(),
            holdings: self.holdings.clone(),
            macd: p.macd[t].clone(),
            rsi: p.rsi[t].clone(),
            cci: p.cci[t].clone(),
            adx: p.adx[t].clone(),
        }
    }

    pub fn state_vector(&self) -> Vec<f64> {
        self.state().as_vector()
    }

    /// Whether the turbulence gate is active on the current date.
    pub fn gate_active(&self) -> bool {
        match (self.config.turbulence_threshold, self.panel.turbulence[self.t]) {
            (Some(threshold), Some(value)) => value > threshold,
            _ => false,
        }
    }

    pub fn equity_point(&self) -> EquityPoint {
        EquityPoint {
            date: self.date(),
            portfolio_value: self.portfolio_value(),
            balance: self.balance,
            turbulence: self.panel.turbulence[self.t],
            halted: self.gate_active(),
        }
    }

    /// Drains the trades executed since the last call.
    pub fn take_trades(&mut self) -> Vec<TradeRecord> {
        std::mem::take(&mut self.trades)
    }

    pub fn step(&mut self, action: &ActionVector) -> Result<StepResult> {
        if action.as_slice().len() != self.panel.n_stocks() {
            return Err(Error::shape(self.panel.n_stocks(), action.as_slice().len()));
        }
        let orders = action.to_orders(self.config.h_max);
        self.execute(&orders)
    }

    /// Executes explicit signed share orders, subject to the same clipping and
    /// turbulence gate as [`step`](Self::step).
    pub fn step_orders(&mut self, orders: &[i64]) -> Result<StepResult> {
        if orders.len() != self.panel.n_stocks() {
            return Err(Error::shape(self.panel.n_stocks(), orders.len()));
        }
        self.execute(orders)
    }

    fn execute(&mut self, orders: &[i64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let n = self.panel.n_stocks();
        let t = self.t;
        let prices = &self.panel.adj_close[t];
        let rate = self.config.cost_rate;
        let value_before = self.portfolio_value();

        let halted = self.gate_active();
        let desired: Vec<i64> = match (halted, self.config.turbulence_policy) {
            (true, TurbulencePolicy::Liquidate) => {
                self.holdings.iter().map(|&h| -(h as i64)).collect()
            }
            (true, TurbulencePolicy::Freeze) => vec![0; n],
            (false, _) => orders.to_vec(),
        };

        let mut executed = vec![0i64; n];
        let mut sells_value = 0.0;
        let mut buys_value = 0.0;
        let mut cash = self.balance;

        for k in 0..n {
            if desired[k] < 0 {
                let shares = (-desired[k]).min(self.holdings[k] as i64);
                if shares > 0 {
                    let gross = prices[k] * shares as f64;
                    sells_value += gross;
                    cash += gross * (1.0 - rate);
                    self.holdings[k] -= shares as u64;
                    executed[k] = -shares;
                }
            }
        }
        for k in 0..n {
            if desired[k] > 0 {
                let unit = prices[k] * (1.0 + rate);
                let mut shares = desired[k].min((cash / unit).floor().max(0.0) as i64);
                while shares > 0 && prices[k] * shares as f64 * (1.0 + rate) > cash {
                    shares -= 1;
                }
                if shares > 0 {
                    let gross = prices[k] * shares as f64;
                    buys_value += gross;
                    cash -= gross * (1.0 + rate);
                    self.holdings[k] += shares as u64;
                    executed[k] = shares;
                }
            }
        }

        let cost = rate * (sells_value + buys_value);
        let balance = self.balance + sells_value - buys_value - cost;
        // rounding can leave a sub-cent negative residue when cash is spent exactly
        self.balance = if balance < 0.0 && balance > -1e-6 { 0.0 } else { balance };
        if self.balance < 0.0 {
            return Err(Error::Numerical(format!("balance went negative: {}", self.balance)));
        }

        let date = self.panel.dates[t];
        for (k, &shares) in executed.iter().enumerate() {
            if shares != 0 {
                let gross = prices[k] * shares.unsigned_abs() as f64;
                self.trades.push(TradeRecord {
                    date,
                    ticker: self.panel.tickers[k].clone(),
                    side: if shares > 0 { Side::Buy } else { Side::Sell },
                    shares: shares.unsigned_abs(),
                    price: prices[k],
                    cost: rate * gross,
                });
            }
        }

        let turbulence = self.panel.turbulence[t];
        self.t += 1;
        let done = self.t == self.end;
        self.done = done;
        let value_after = self.portfolio_value();

        Ok(StepResult {
            next_state: self.state(),
            reward: self.config.reward_scale * (value_after - value_before),
            done,
            info: StepInfo {
                executed,
                sells_value,
                buys_value,
                cost,
                turbulence,
                halted,
            },
        })
    }
}
