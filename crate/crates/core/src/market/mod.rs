//! OHLCV ingestion, panel alignment, technical indicators and turbulence.

mod indicators;
mod io;
mod turbulence;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use indicators::{adx, cci, compute_indicators, ema, macd, rsi, IndicatorParams};
pub use io::{load_ohlcv, load_ohlcv_multi, read_panel_csv, write_panel_csv};
pub use turbulence::{
    compute_turbulence, fill_turbulence, mahalanobis, percentile, simple_returns,
    turbulence_threshold, TurbulenceParams,
};

/// One trading day for one ticker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adjusted_close: f64,
    pub volume: f64,
}

impl Bar {
    /// Checks the price/volume invariants, returning a description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let prices = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("adjclose", self.adjusted_close),
        ];
        for (name, value) in prices {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("{name} must be a positive price, got {value}"));
            }
        }
        if !(self.volume.is_finite() && self.volume >= 0.0) {
            return Err(format!("volume must be non-negative, got {}", self.volume));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low {} exceeds min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high {} is below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        Ok(())
    }
}

/// Bars for a single ticker, strictly increasing by date.
#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    pub ticker: String,
    pub bars: Vec<Bar>,
}

impl BarSeries {
    /// Sorts `bars` by date and rejects duplicates.
    pub fn new(ticker: impl Into<String>, mut bars: Vec<Bar>) -> Result<Self> {
        let ticker = ticker.into();
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(Error::DuplicateDate {
                ticker,
                date: w[0].date,
            });
        }
        Ok(Self { ticker, bars })
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }
}

/// Date-aligned multi-ticker table. Every matrix is indexed `[date][ticker]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub adj_close: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
    pub low: Vec<Vec<f64>>,
    pub close: Vec<Vec<f64>>,
    pub macd: Vec<Vec<f64>>,
    pub rsi: Vec<Vec<f64>>,
    pub cci: Vec<Vec<f64>>,
    pub adx: Vec<Vec<f64>>,
    /// `None` on dates without enough return history.
    pub turbulence: Vec<Option<f64>>,
}

impl Panel {
    /// Builds a panel from price matrices; indicators start as NaN and turbulence as `None`.
    pub fn from_prices(
        tickers: Vec<String>,
        dates: Vec<NaiveDate>,
        adj_close: Vec<Vec<f64>>,
        high: Vec<Vec<f64>>,
        low: Vec<Vec<f64>>,
        close: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = tickers.len();
        let t = dates.len();
        for (name, m) in [
            ("adj_close", &adj_close),
            ("high", &high),
            ("low", &low),
            ("close", &close),
        ] {
            if m.len() != t || m.iter().any(|row| row.len() != n) {
                return Err(Error::shape(format!("{name} [{t}][{n}]"), format!("{name} with other dims")));
            }
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Alignment("panel dates must be strictly increasing".into()));
        }
        let nan = vec![vec![f64::NAN; n]; t];
        Ok(Self {
            tickers,
            dates,
            adj_close,
            high,
            low,
            close,
            macd: nan.clone(),
            rsi: nan.clone(),
            cci: nan.clone(),
            adx: nan,
            turbulence: vec![None; t],
        })
    }

    /// Panel where open/high/low/close all equal the adjusted close.
    pub fn from_close_prices(
        tickers: Vec<String>,
        dates: Vec<NaiveDate>,
        prices: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::from_prices(tickers, dates, prices.clone(), prices.clone(), prices.clone(), prices)
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    /// Index of `date` in the calendar.
    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Index range `[first, last]` covering dates inside `[start, end]`.
    pub fn index_range(&self, start: NaiveDate, end: NaiveDate) -> Option<(usize, usize)> {
        let first = self.dates.partition_point(|d| *d < start);
        let past = self.dates.partition_point(|d| *d <= end);
        (first < past).then(|| (first, past - 1))
    }

    /// Copy of the panel restricted to date indices `[from, to)`.
    pub fn slice_dates(&self, from: usize, to: usize) -> Panel {
        let cut = |m: &Vec<Vec<f64>>| m[from..to].to_vec();
        Panel {
            tickers: self.tickers.clone(),
            dates: self.dates[from..to].to_vec(),
            adj_close: cut(&self.adj_close),
            high: cut(&self.high),
            low: cut(&self.low),
            close: cut(&self.close),
            macd: cut(&self.macd),
            rsi: cut(&self.rsi),
            cci: cut(&self.cci),
            adx: cut(&self.adx),
            turbulence: self.turbulence[from..to].to_vec(),
        }
    }

    /// Column of one matrix for ticker `k`.
    pub fn column(matrix: &[Vec<f64>], k: usize) -> Vec<f64> {
        matrix.iter().map(|row| row[k]).collect()
    }
}

/// A ticker removed during alignment because it had gaps on the shared calendar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedTicker {
    pub ticker: String,
    pub missing_days: usize,
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub panel: Panel,
    pub dropped: Vec<DroppedTicker>,
}

/// Aligns series onto a shared trading calendar.
///
/// The calendar spans the overlap of all series (at or after `min_start`) and
/// holds every date traded by at least half of the tickers. Tickers missing any
/// calendar date are dropped and reported.
pub fn align_panel(series: &[BarSeries], min_start: Option<NaiveDate>) -> Result<Alignment> {
    if series.is_empty() {
        return Err(Error::Alignment("no series supplied".into()));
    }
    let mut seen = BTreeSet::new();
    for s in series {
        if !seen.insert(s.ticker.as_str()) {
            return Err(Error::Alignment(format!("ticker {} supplied twice", s.ticker)));
        }
        if s.is_empty() {
            return Err(Error::Alignment(format!("ticker {} has no bars", s.ticker)));
        }
    }

    let floor = min_start.unwrap_or(NaiveDate::MIN);
    let start = series
        .iter()
        .map(|s| s.bars[0].date)
        .max()
        .expect("non-empty")
        .max(floor);
    let end = series
        .iter()
        .map(|s| s.bars[s.bars.len() - 1].date)
        .min()
        .expect("non-empty");
    if start > end {
        return Err(Error::Alignment(format!(
            "series do not overlap at or after {start}"
        )));
    }

    let mut counts: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for s in series {
        for b in s.bars.iter().filter(|b| b.date >= start && b.date <= end) {
            *counts.entry(b.date).or_default() += 1;
        }
    }
    let quorum = series.len().div_ceil(2);
    let calendar: Vec<NaiveDate> = counts
        .into_iter()
        .filter(|&(_, c)| c >= quorum)
        .map(|(d, _)| d)
        .collect();
    if calendar.is_empty() {
        return Err(Error::Alignment("empty common calendar".into()));
    }

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for s in series {
        let by_date: BTreeMap<NaiveDate, &Bar> = s.bars.iter().map(|b| (b.date, b)).collect();
        let missing = calendar.iter().filter(|d| !by_date.contains_key(d)).count();
        if missing > 0 {
            log::warn!("dropping {}: missing {} of {} calendar days", s.ticker, missing, calendar.len());
            dropped.push(DroppedTicker {
                ticker: s.ticker.clone(),
                missing_days: missing,
            });
        } else {
            kept.push((s.ticker.clone(), by_date));
        }
    }
    if kept.is_empty() {
        return Err(Error::Alignment("every ticker has gaps on the common calendar".into()));
    }

    let grab = |f: fn(&Bar) -> f64| -> Vec<Vec<f64>> {
        calendar
            .iter()
            .map(|d| kept.iter().map(|(_, m)| f(m[d])).collect())
            .collect()
    };
    let panel = Panel::from_prices(
        kept.iter().map(|(t, _)| t.clone()).collect(),
        calendar.clone(),
        grab(|b| b.adjusted_close),
        grab(|b| b.high),
        grab(|b| b.low),
        grab(|b| b.close),
    )?;
    Ok(Alignment { panel, dropped })
}
