use serde::{Deserialize, Serialize};

use super::Panel;
use crate::error::{Error, Result};

/// Indicator periods and the warm-up trimmed from the front of the panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorParams {
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub rsi_period: usize,
    pub cci_period: usize,
    pub cci_constant: f64,
    pub adx_period: usize,
    pub warmup: usize,
}

impl Default for IndicatorParams {
    fn default() -> Self {
        Self {
            macd_fast: 12,
            macd_slow: 26,
            rsi_period: 14,
            cci_period: 14,
            cci_constant: 0.015,
            adx_period: 14,
            warmup: 63,
        }
    }
}

impl IndicatorParams {
    /// First index at which every indicator is defined.
    pub fn first_defined(&self) -> usize {
        self.rsi_period
            .max(self.cci_period.saturating_sub(1))
            .max(2 * self.adx_period - 1)
    }

    fn validate(&self) -> Result<()> {
        let periods = [
            self.macd_fast,
            self.macd_slow,
            self.rsi_period,
            self.cci_period,
            self.adx_period,
        ];
        if periods.contains(&0) {
            return Err(Error::Config("indicator periods must be positive".into()));
        }
        if self.warmup < self.first_defined() {
            return Err(Error::Config(format!(
                "warm-up {} shorter than indicator stabilisation {}",
                self.warmup,
                self.first_defined()
            )));
        }
        if !(self.cci_constant > 0.0) {
            return Err(Error::Config("cci constant must be positive".into()));
        }
        Ok(())
    }
}

/// Exponential moving average with `alpha = 2 / (span + 1)`, seeded by the first value.
pub fn ema(x: &[f64], span: usize) -> Vec<f64> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(x.len());
    let mut prev = match x.first() {
        Some(&v) => v,
        None => return out,
    };
    out.push(prev);
    for &v in &x[1..] {
        prev = alpha * v + (1.0 - alpha) * prev;
        out.push(prev);
    }
    out
}

pub fn macd(close: &[f64], fast: usize, slow: usize) -> Vec<f64> {
    ema(close, fast)
        .into_iter()
        .zip(ema(close, slow))
        .map(|(f, s)| f - s)
        .collect()
}

/// Wilder smoothing of `x[1..]`: seeded with the mean of `x[1..=period]` at
/// index `period`, then `avg = (avg * (period - 1) + x) / period`.
fn wilder_from(x: &[f64], start: usize, period: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; x.len()];
    let seed_end = start + period - 1;
    if seed_end >= x.len() {
        return out;
    }
    let p = period as f64;
    let mut avg = x[start..=seed_end].iter().sum::<f64>() / p;
    out[seed_end] = avg;
    for t in seed_end + 1..x.len() {
        avg = (avg * (p - 1.0) + x[t]) / p;
        out[t] = avg;
    }
    out
}

/// Relative strength index with Wilder smoothing. Flat windows read 50.
pub fn rsi(close: &[f64], period: usize) -> Vec<f64> {
    let n = close.len();
    let mut gains = vec![0.0; n];
    let mut losses = vec![0.0; n];
    for t in 1..n {
        let d = close[t] - close[t - 1];
        gains[t] = d.max(0.0);
        losses[t] = (-d).max(0.0);
    }
    let avg_gain = wilder_from(&gains, 1, period);
    let avg_loss = wilder_from(&losses, 1, period);
    avg_gain
        .iter()
        .zip(&avg_loss)
        .map(|(&g, &l)| {
            if g.is_nan() {
                f64::NAN
            } else if l == 0.0 {
                if g == 0.0 {
                    50.0
                } else {
                    100.0
                }
            } else {
                100.0 - 100.0 / (1.0 + g / l)
            }
        })
        .collect()
}

/// Commodity channel index over the typical price. Zero mean deviation reads 0.
pub fn cci(high: &[f64], low: &[f64], close: &[f64], period: usize, constant: f64) -> Vec<f64> {
    let tp: Vec<f64> = (0..close.len())
        .map(|t| (high[t] + low[t] + close[t]) / 3.0)
        .collect();
    let mut out = vec![f64::NAN; tp.len()];
    for t in period.saturating_sub(1)..tp.len() {
        let window = &tp[t + 1 - period..=t];
        let mean = window.iter().sum::<f64>() / period as f64;
        let mad = window.iter().map(|v| (v - mean).abs()).sum::<f64>() / period as f64;
        out[t] = if mad == 0.0 {
            0.0
        } else {
            (tp[t] - mean) / (constant * mad)
        };
    }
    out
}

/// Average directional index with Wilder smoothing of TR, +DM, -DM and DX.
pub fn adx(high: &[f64], low: &[f64], close: &[f64], period: usize) -> Vec<f64> {
    let n = close.len();
    let mut tr = vec![0.0; n];
    let mut plus_dm = vec![0.0; n];
    let mut minus_dm = vec![0.0; n];
    for t in 1..n {
        let up = high[t] - high[t - 1];
        let down = low[t - 1] - low[t];
        plus_dm[t] = if up > down && up > 0.0 { up } else { 0.0 };
        minus_dm[t] = if down > up && down > 0.0 { down } else { 0.0 };
        tr[t] = (high[t] - low[t])
            .max((high[t] - close[t - 1]).abs())
            .max((low[t] - close[t - 1]).abs());
    }
    let s_tr = wilder_from(&tr, 1, period);
    let s_plus = wilder_from(&plus_dm, 1, period);
    let s_minus = wilder_from(&minus_dm, 1, period);

    let mut dx = vec![f64::NAN; n];
    for t in period..n {
        let (plus_di, minus_di) = if s_tr[t] == 0.0 {
            (0.0, 0.0)
        } else {
            (100.0 * s_plus[t] / s_tr[t], 100.0 * s_minus[t] / s_tr[t])
        };
        let sum = plus_di + minus_di;
        dx[t] = if sum == 0.0 {
            0.0
        } else {
            100.0 * (plus_di - minus_di).abs() / sum
        };
    }
    wilder_from(&dx, period, period)
}

/// Fills MACD, RSI, CCI and ADX for every ticker and trims the warm-up dates.
pub fn compute_indicators(panel: &Panel, params: &IndicatorParams) -> Result<Panel> {
    params.validate()?;
    if panel.n_dates() <= params.warmup {
        return Err(Error::InsufficientHistory {
            needed: params.warmup,
            available: panel.n_dates(),
        });
    }
    let mut out = panel.clone();
    for k in 0..panel.n_stocks() {
        let close = Panel::column(&panel.close, k);
        let high = Panel::column(&panel.high, k);
        let low = Panel::column(&panel.low, k);
        let columns = [
            macd(&close, params.macd_fast, params.macd_slow),
            rsi(&close, params.rsi_period),
            cci(&high, &low, &close, params.cci_period, params.cci_constant),
            adx(&high, &low, &close, params.adx_period),
        ];
        for t in 0..panel.n_dates() {
            out.macd[t][k] = columns[0][t];
            out.rsi[t][k] = columns[1][t];
            out.cci[t][k] = columns[2][t];
            out.adx[t][k] = columns[3][t];
        }
    }
    let trimmed = out.slice_dates(params.warmup, panel.n_dates());
    let all_finite = [&trimmed.macd, &trimmed.rsi, &trimmed.cci, &trimmed.adx]
        .iter()
        .all(|m| m.iter().flatten().all(|v| v.is_finite()));
    if !all_finite {
        return Err(Error::Numerical("non-finite indicator after warm-up".into()));
    }
    Ok(trimmed)
}
