//! Rolling retrain-and-trade protocol.
//!
//! Every window trains on all data from the start of the calendar through its
//! training end, then trades the following stretch of dates with the frozen
//! deterministic policy. The portfolio carries over from window to window.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::env::{
    write_equity_csv, write_trades_csv, EnvConfig, EquityPoint, TradeRecord, TradingEnv,
};
use crate::error::{Error, Result};
use crate::market::{turbulence_threshold, Panel};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::nn::Checkpoint;
use crate::ppo::{write_train_log, UpdateStats};
use crate::strategy::Strategy;

/// Checkpoint record holding the last training date, in days since 0001-01-01.
pub const TRAINED_THROUGH_RECORD: &str = "meta.trained_through";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub trade_start: NaiveDate,
    pub trade_end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub windows: Vec<Window>,
}

/// Splits `calendar` into windows whose boundaries sit `stride_months` apart,
/// starting at `train_end_initial`. Each window trades the calendar dates in
/// `(boundary_k, boundary_k+1]`; the last one may be partial.
pub fn make_schedule(calendar: &[NaiveDate], train_end_initial: NaiveDate, stride_months: u32) -> Result<Schedule> {
    if stride_months == 0 {
        return Err(Error::Config("stride must be at least one month".into()));
    }
    let (first, last) = match (calendar.first(), calendar.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::EmptyInput("calendar".into())),
    };
    if calendar.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Alignment("calendar must be strictly increasing".into()));
    }
    if train_end_initial >= last {
        return Err(Error::InsufficientHistory {
            needed: 1,
            available: 0,
        });
    }
    if train_end_initial < first {
        return Err(Error::Config(format!(
            "initial training end {train_end_initial} precedes the calendar start {first}"
        )));
    }
    let mut windows = Vec::new();
    let mut k = 0u32;
    loop {
        let boundary = add_months(train_end_initial, k * stride_months)?;
        if boundary >= last {
            break;
        }
        let next = add_months(train_end_initial, (k + 1) * stride_months)?;
        let lo = calendar.partition_point(|d| *d <= boundary);
        let hi = calendar.partition_point(|d| *d <= next);
        if lo < hi {
            windows.push(Window {
                index: windows.len(),
                train_start: first,
                train_end: calendar[lo - 1],
                trade_start: calendar[lo],
                trade_end: calendar[hi - 1],
            });
        }
        k += 1;
    }
    Ok(Schedule { windows })
}

fn add_months(date: NaiveDate, months: u32) -> Result<NaiveDate> {
    date.checked_add_months(Months::new(months))
        .ok_or_else(|| Error::Config(format!("date overflow adding {months} months to {date}")))
}

/// Provenance for one window, used to audit for look-ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub trade_start: NaiveDate,
    pub trade_end: NaiveDate,
    /// Last date whose data the traded policy was trained on.
    pub checkpoint_through: NaiveDate,
    /// Last date that entered the turbulence threshold, if any did.
    pub threshold_through: Option<NaiveDate>,
    pub threshold: Option<f64>,
    pub train_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub strategy: String,
    pub equity: Vec<EquityPoint>,
    pub trades: Vec<TradeRecord>,
    /// `None` when no window traded.
    pub metrics: Option<MetricsReport>,
    pub windows: Vec<WindowRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub train_logs: Vec<Vec<UpdateStats>>,
    /// Diagnostic for the window that aborted the run.
    pub failure: Option<String>,
}

impl BacktestReport {
    pub fn equity_values(&self) -> Vec<f64> {
        self.equity.iter().map(|p| p.portfolio_value).collect()
    }
}

fn index_of(panel: &Panel, date: NaiveDate) -> Result<usize> {
    panel
        .date_index(date)
        .ok_or_else(|| Error::Alignment(format!("schedule date {date} is not in the panel")))
}

fn date_code(date: NaiveDate) -> f64 {
    date.num_days_from_ce() as f64
}

/// Reads the training-end stamp back from a checkpoint.
pub fn trained_through(checkpoint: &Checkpoint) -> Option<NaiveDate> {
    let rec = checkpoint.get(TRAINED_THROUGH_RECORD)?;
    NaiveDate::from_num_days_from_ce_opt(*rec.values.first()? as i32)
}

/// Runs every window of `schedule` in order.
///
/// A window whose training diverges stops the run; the report then holds the
/// windows completed so far and `failure` describes the problem.
pub fn run_backtest(
    panel: &Panel,
    schedule: &Schedule,
    strategy: &mut dyn Strategy,
    env_config: &EnvConfig,
    risk_free_annual: f64,
) -> Result<BacktestReport> {
    env_config.validate()?;
    if schedule.windows.is_empty() {
        return Err(Error::EmptyInput("backtest schedule".into()));
    }
    let mut report = BacktestReport {
        strategy: strategy.name().to_string(),
        equity: Vec::new(),
        trades: Vec::new(),
        metrics: None,
        windows: Vec::new(),
        checkpoints: Vec::new(),
        train_logs: Vec::new(),
        failure: None,
    };
    let mut balance = env_config.initial_capital;
    let mut holdings = vec![0u64; panel.n_stocks()];

    for w in &schedule.windows {
        let train_from = index_of(panel, w.train_start)?;
        let train_to = index_of(panel, w.train_end)?;
        let trade_from = index_of(panel, w.trade_start)?;
        let trade_to = index_of(panel, w.trade_end)?;
        if !(train_to < trade_from && trade_from <= trade_to) {
            return Err(Error::Contract(format!("window {} is not ordered train < trade", w.index)));
        }

        let history: Vec<(usize, f64)> = (train_from..=train_to)
            .filter_map(|t| panel.turbulence[t].map(|v| (t, v)))
            .collect();
        let (threshold, threshold_through) = if history.is_empty() {
            log::warn!("window {}: no turbulence history, gate disabled", w.index);
            (None, None)
        } else {
            let values: Vec<f64> = history.iter().map(|(_, v)| *v).collect();
            let last = history[history.len() - 1].0;
            (Some(turbulence_threshold(&values)?), Some(panel.dates[last]))
        };

        let fit = if train_to > train_from {
            strategy.fit(panel, train_from, train_to, env_config)?
        } else {
            Default::default()
        };
        let mut checkpoint = strategy.checkpoint();
        checkpoint.push(TRAINED_THROUGH_RECORD, vec![1], vec![date_code(w.train_end)]);
        report.train_logs.push(fit.log);
        if let Some(msg) = fit.divergence {
            report.checkpoints.push(checkpoint);
            report.failure = Some(format!("window {}: training diverged: {msg}", w.index));
            break;
        }
        report.checkpoints.push(checkpoint);
        report.windows.push(WindowRecord {
            index: w.index,
            train_start: w.train_start,
            train_end: w.train_end,
            trade_start: w.trade_start,
            trade_end: w.trade_end,
            checkpoint_through: w.train_end,
            threshold_through,
            threshold,
            train_steps: fit.steps,
        });

        let config = EnvConfig {
            turbulence_threshold: threshold,
            ..*env_config
        };
        strategy.begin_episode();
        if trade_to == trade_from {
            // a one-day window only marks the portfolio to market
            let prices = &panel.adj_close[trade_from];
            let value = balance + holdings.iter().zip(prices).map(|(h, p)| *h as f64 * p).sum::<f64>();
            report.equity.push(EquityPoint {
                date: panel.dates[trade_from],
                portfolio_value: value,
                balance,
                turbulence: panel.turbulence[trade_from],
                halted: matches!((threshold, panel.turbulence[trade_from]), (Some(th), Some(v)) if v > th),
            });
            continue;
        }
        let mut env = TradingEnv::new(panel, trade_from, trade_to, config)?;
        let mut state = env.reset_with(balance, holdings.clone())?;
        loop {
            report.equity.push(env.equity_point());
            if env.is_done() {
                break;
            }
            let action = strategy.act(&state)?;
            let step = env.step(&action)?;
            state = step.next_state;
        }
        report.trades.extend(env.take_trades());
        balance = env.balance();
        holdings = env.holdings().to_vec();
    }

    if !report.equity.is_empty() {
        report.metrics = Some(compute_metrics(&report.equity_values(), &report.trades, risk_free_annual)?);
    }
    Ok(report)
}

/// Replays executed trades through a fresh, ungated environment over the
/// dates of `equity`, returning the resulting daily portfolio values.
pub fn replay_equity(panel: &Panel, env_config: &EnvConfig, equity: &[EquityPoint], trades: &[TradeRecord]) -> Result<Vec<f64>> {
    let (first, last) = match (equity.first(), equity.last()) {
        (Some(f), Some(l)) => (index_of(panel, f.date)?, index_of(panel, l.date)?),
        _ => return Err(Error::EmptyInput("equity curve".into())),
    };
    if last - first + 1 != equity.len() {
        return Err(Error::Alignment("equity dates are not a contiguous calendar run".into()));
    }
    let config = EnvConfig {
        turbulence_threshold: None,
        ..*env_config
    };
    if first == last {
        return Ok(vec![config.initial_capital]);
    }
    let mut env = TradingEnv::new(panel, first, last, config)?;
    env.reset();
    let mut values = vec![env.portfolio_value()];
    let mut cursor = 0;
    while !env.is_done() {
        let date = env.date();
        let mut orders = vec![0i64; panel.n_stocks()];
        while cursor < trades.len() && trades[cursor].date == date {
            let t = &trades[cursor];
            let k = panel
                .tickers
                .iter()
                .position(|name| *name == t.ticker)
                .ok_or_else(|| Error::Alignment(format!("unknown ticker {} in trade log", t.ticker)))?;
            let signed = t.shares as i64;
            orders[k] += match t.side {
                crate::env::Side::Buy => signed,
                crate::env::Side::Sell => -signed,
            };
            cursor += 1;
        }
        env.step_orders(&orders)?;
        values.push(env.portfolio_value());
    }
    if cursor != trades.len() {
        return Err(Error::Alignment("trade log has dates outside the equity curve".into()));
    }
    Ok(values)
}

/// Writes `equity.csv`, `trades.csv`, `metrics.csv`, `windows.csv`,
/// `train_log_<k>.csv` and `checkpoints/window_<k>.ckpt` under `dir`.
pub fn write_report(report: &BacktestReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("checkpoints"))?;
    write_equity_csv(&report.equity, BufWriter::new(File::create(dir.join("equity.csv"))?))?;
    write_trades_csv(&report.trades, BufWriter::new(File::create(dir.join("trades.csv"))?))?;
    if let Some(m) = &report.metrics {
        crate::metrics::write_metrics_csv(m, BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
    }
    write_windows_csv(&report.windows, BufWriter::new(File::create(dir.join("windows.csv"))?))?;
    for (k, log) in report.train_logs.iter().enumerate() {
        write_train_log(log, BufWriter::new(File::create(dir.join(format!("train_log_{k}.csv")))?))?;
    }
    for (k, ckpt) in report.checkpoints.iter().enumerate() {
        ckpt.write_file(dir.join("checkpoints").join(format!("window_{k}.ckpt")))?;
    }
    Ok(())
}

pub fn write_windows_csv(windows: &[WindowRecord], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "index",
        "train_start",
        "train_end",
        "trade_start",
        "trade_end",
        "checkpoint_through",
        "threshold_through",
        "threshold",
        "train_steps",
    ])?;
    for r in windows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_windows_csv(input: impl Read) -> Result<Vec<WindowRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
