use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Panel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceParams {
    /// Number of daily returns used to estimate mean and covariance.
    pub lookback: usize,
    /// Diagonal ridge as a multiple of `trace(cov) / n`.
    pub ridge: f64,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            lookback: 252,
            ridge: 1e-8,
        }
    }
}

/// One-day simple returns on adjusted close. Row `t` holds the return into
/// date `t`; row 0 is all zeros.
pub fn simple_returns(panel: &Panel) -> Vec<Vec<f64>> {
    let n = panel.n_stocks();
    let mut out = vec![vec![0.0; n]; panel.n_dates()];
    for t in 1..panel.n_dates() {
        for k in 0..n {
            out[t][k] = panel.adj_close[t][k] / panel.adj_close[t - 1][k] - 1.0;
        }
    }
    out
}

/// Squared Mahalanobis distance of `y` from the sample mean/covariance of `history`.
pub fn mahalanobis(y: &[f64], history: &[Vec<f64>], ridge: f64) -> Result<f64> {
    let n = y.len();
    let m = history.len();
    if m < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            available: m,
        });
    }
    if history.iter().any(|r| r.len() != n) {
        return Err(Error::shape(format!("history rows of length {n}"), "ragged history"));
    }

    let mut mean = DVector::<f64>::zeros(n);
    for row in history {
        mean += DVector::from_column_slice(row);
    }
    mean /= m as f64;

    let mut cov = DMatrix::<f64>::zeros(n, n);
    for row in history {
        let d = DVector::from_column_slice(row) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (m - 1) as f64;

    let trace = cov.trace();
    let bump = if trace > 0.0 {
        ridge * trace / n as f64
    } else {
        ridge.max(1e-12)
    };
    for i in 0..n {
        cov[(i, i)] += bump;
    }

    let dev = DVector::from_column_slice(y) - &mean;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("return covariance is not positive definite".into()))?;
    let solved = chol.solve(&dev);
    let value = dev.dot(&solved);
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite turbulence".into()));
    }
    Ok(value.max(0.0))
}

/// Turbulence at `date_index`: distance of that day's return vector from the
/// `lookback` returns immediately before it.
pub fn compute_turbulence(panel: &Panel, date_index: usize, params: &TurbulenceParams) -> Result<f64> {
    let returns = simple_returns(panel);
    turbulence_at(&returns, date_index, params)
}

fn turbulence_at(returns: &[Vec<f64>], date_index: usize, params: &TurbulenceParams) -> Result<f64> {
    let n = returns.first().map_or(0, Vec::len);
    if params.lookback < n + 2 {
        return Err(Error::Config(format!(
            "turbulence lookback {} must be at least n_stocks + 2 = {}",
            params.lookback,
            n + 2
        )));
    }
    if date_index >= returns.len() || date_index <= params.lookback {
        return Err(Error::InsufficientHistory {
            needed: params.lookback + 1,
            available: date_index.min(returns.len()),
        });
    }
    let history = &returns[date_index - params.lookback..date_index];
    mahalanobis(&returns[date_index], history, params.ridge)
}

/// Fills `panel.turbulence` for every date with enough history; earlier dates stay `None`.
pub fn fill_turbulence(panel: &mut Panel, params: &TurbulenceParams) -> Result<()> {
    let returns = simple_returns(panel);
    let mut filled = vec![None; panel.n_dates()];
    for (t, slot) in filled.iter_mut().enumerate().skip(params.lookback + 1) {
        *slot = Some(turbulence_at(&returns, t, params)?);
    }
    panel.turbulence = filled;
    Ok(())
}

/// Percentile with linear interpolation between order statistics; `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of empty history".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64))
}

/// 90th percentile of an in-sample turbulence history.
pub fn turbulence_threshold(history: &[f64]) -> Result<f64> {
    percentile(history, 0.9)
}
