//! Seeded synthetic markets for tests, benchmarks and demos.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::market::{compute_indicators, fill_turbulence, IndicatorParams, Panel, TurbulenceParams};

/// Independent geometric random walks, one per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub start: NaiveDate,
    pub n_days: usize,
    pub initial_prices: Vec<f64>,
    /// Daily log drift per asset.
    pub drifts: Vec<f64>,
    /// Daily log volatility per asset.
    pub volatilities: Vec<f64>,
    /// Half-width of the high/low band around the close, as a fraction.
    pub intraday_range: f64,
    pub seed: u64,
}

impl SyntheticMarket {
    /// `n` assets at price 100 with the given drift and volatility.
    pub fn uniform(n: usize, n_days: usize, drift: f64, volatility: f64, seed: u64) -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
            n_days,
            initial_prices: vec![100.0; n],
            drifts: vec![drift; n],
            volatilities: vec![volatility; n],
            intraday_range: 0.01,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.initial_prices.len();
        if n == 0 || self.n_days < 2 {
            return Err(Error::Config("synthetic market needs at least one asset and two days".into()));
        }
        if self.drifts.len() != n || self.volatilities.len() != n {
            return Err(Error::shape(n, self.drifts.len().max(self.volatilities.len())));
        }
        if self.initial_prices.iter().any(|p| !(*p > 0.0)) || self.volatilities.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("prices must be positive and volatilities non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.intraday_range) {
            return Err(Error::Config("intraday range must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Raw price panel; indicators are NaN until [`prepare`] runs.
    pub fn generate(&self) -> Result<Panel> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.initial_prices.len();
        let mut close = Vec::with_capacity(self.n_days);
        let mut high = Vec::with_capacity(self.n_days);
        let mut low = Vec::with_capacity(self.n_days);
        let mut current = self.initial_prices.clone();
        for t in 0..self.n_days {
            if t > 0 {
                for k in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    let s = self.volatilities[k];
                    current[k] *= (self.drifts[k] - 0.5 * s * s + s * z).exp();
                }
            }
            let mut h = Vec::with_capacity(n);
            let mut l = Vec::with_capacity(n);
            for &c in &current {
                h.push(c * (1.0 + self.intraday_range * rng.random::<f64>()));
                l.push(c * (1.0 - self.intraday_range * rng.random::<f64>()));
            }
            close.push(current.clone());
            high.push(h);
            low.push(l);
        }
        let tickers = (0..n).map(|k| format!("SYN{k}")).collect();
        Panel::from_prices(
            tickers,
            business_days(self.start, self.n_days),
            close.clone(),
            high,
            low,
            close,
        )
    }
}

/// `n` consecutive weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Scales every price from `date_index` on by `1 - drop`, producing a
/// simultaneous one-day fall of `drop` across all tickers.
pub fn inject_crash(panel: &mut Panel, date_index: usize, drop: f64) -> Result<()> {
    if date_index == 0 || date_index >= panel.n_dates() {
        return Err(Error::Contract(format!("crash day {date_index} outside (0, {})", panel.n_dates())));
    }
    if !(0.0..1.0).contains(&drop) {
        return Err(Error::Config("crash size must lie in [0, 1)".into()));
    }
    let factor = 1.0 - drop;
    for t in date_index..panel.n_dates() {
        for m in [&mut panel.adj_close, &mut panel.close, &mut panel.high, &mut panel.low] {
            for v in &mut m[t] {
                *v *= factor;
            }
        }
    }
    Ok(())
}

/// Computes indicators (trimming the warm-up) and fills turbulence.
pub fn prepare(raw: &Panel, indicators: &IndicatorParams, turbulence: &TurbulenceParams) -> Result<Panel> {
    let mut panel = compute_indicators(raw, indicators)?;
    fill_turbulence(&mut panel, turbulence)?;
    Ok(panel)
}
