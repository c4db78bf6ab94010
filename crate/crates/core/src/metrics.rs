//! Performance measures over a daily equity curve.
//!
//! Curves are daily portfolio values and must be strictly positive.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env::TradeRecord;
use crate::error::{Error, Result};
use crate::market::Panel;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Cumulative return, as a fraction.
    pub cr: f64,
    /// Max earning rate: largest trough-to-later-peak gain.
    pub mer: f64,
    /// Max pullback: largest peak-to-later-trough loss, as a positive fraction.
    pub mpb: f64,
    /// Average profit per trade; `None` without trades.
    pub appt: Option<f64>,
    /// Annualized Sharpe ratio; `None` when returns have no variance.
    pub sr: Option<f64>,
    pub nt: usize,
}

fn check_curve(curve: &[f64]) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::EmptyInput("equity curve".into()));
    }
    if curve.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Contract("equity curve values must be finite and positive".into()));
    }
    Ok(())
}

/// `(P_end - P_0) / P_0`.
pub fn cumulative_return(curve: &[f64]) -> Result<f64> {
    check_curve(curve)?;
    let first = curve[0];
    Ok((curve[curve.len() - 1] - first) / first)
}

/// Max of `(A_x - A_y) / A_y` over `y < x`; 0 when the curve never rises.
pub fn max_earning_rate(curve: &[f64]) -> f64 {
    let mut best = 0.0f64;
    let mut low = f64::INFINITY;
    for &v in curve {
        if v > low {
            best = best.max((v - low) / low);
        }
        low = low.min(v);
    }
    best
}

/// Max of `(A_y - A_x) / A_y` over `y < x`; 0 when the curve never falls.
pub fn max_pullback(curve: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    let mut peak = f64::NEG_INFINITY;
    for &v in curve {
        if v < peak {
            worst = worst.max((peak - v) / peak);
        }
        peak = peak.max(v);
    }
    worst
}

/// One trade per executed per-stock order.
pub fn trade_count(trades: &[TradeRecord]) -> usize {
    trades.iter().filter(|t| t.shares > 0).count()
}

/// `(P_end - P_0) / NT`, or `None` when nothing traded.
pub fn appt(curve: &[f64], nt: usize) -> Result<Option<f64>> {
    check_curve(curve)?;
    if nt == 0 {
        return Ok(None);
    }
    Ok(Some((curve[curve.len() - 1] - curve[0]) / nt as f64))
}

/// Simple day-over-day returns.
pub fn daily_returns(curve: &[f64]) -> Vec<f64> {
    curve.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// `(252 * mean - rf) / (sqrt(252) * std)` on daily simple returns, with the
/// sample standard deviation.
pub fn sharpe(curve: &[f64], risk_free_annual: f64, periods_per_year: f64) -> Option<f64> {
    let r = daily_returns(curve);
    if r.len() < 2 {
        return None;
    }
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    // returns that are constant up to rounding count as zero variance
    if std == 0.0 || std <= 1e-10 * mean.abs() {
        return None;
    }
    Some((mean * periods_per_year - risk_free_annual) / (std * periods_per_year.sqrt()))
}

pub fn compute_metrics(curve: &[f64], trades: &[TradeRecord], risk_free_annual: f64) -> Result<MetricsReport> {
    let nt = trade_count(trades);
    Ok(MetricsReport {
        cr: cumulative_return(curve)?,
        mer: max_earning_rate(curve),
        mpb: max_pullback(curve),
        appt: appt(curve, nt)?,
        sr: sharpe(curve, risk_free_annual, TRADING_DAYS_PER_YEAR),
        nt,
    })
}

/// Equal-weight buy-and-hold index over date indices `[from, to]`, scaled to
/// `start_value` on the first date.
pub fn buy_and_hold_index(panel: &Panel, from: usize, to: usize, start_value: f64) -> Result<Vec<f64>> {
    if from > to || to >= panel.n_dates() {
        return Err(Error::Contract(format!("index range [{from}, {to}] outside the panel")));
    }
    let base = &panel.adj_close[from];
    let n = panel.n_stocks() as f64;
    Ok(panel.adj_close[from..=to]
        .iter()
        .map(|row| start_value * row.iter().zip(base).map(|(p, b)| p / b).sum::<f64>() / n)
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `metric,value` rows for CR, MER, MPB, APPT, SR and NT; undefined values are `NA`.
pub fn write_metrics_csv(report: &MetricsReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "value"])?;
    let rows = [
        ("CR", report.cr.to_string()),
        ("MER", report.mer.to_string()),
        ("MPB", report.mpb.to_string()),
        ("APPT", fmt_opt(report.appt)),
        ("SR", fmt_opt(report.sr)),
        ("NT", report.nt.to_string()),
    ];
    for (name, value) in rows {
        w.write_record([name, value.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(input: impl Read) -> Result<MetricsReport> {
    let mut r = csv::Reader::from_reader(input);
    let mut values = std::collections::HashMap::new();
    for row in r.records() {
        let row = row?;
        let key = row.get(0).unwrap_or_default().to_string();
        values.insert(key, row.get(1).unwrap_or_default().to_string());
    }
    let field = |name: &str| -> Result<Option<f64>> {
        let raw = values
            .get(name)
            .ok_or_else(|| Error::Parse {
                path: "metrics.csv".into(),
                line: 0,
                message: format!("missing metric {name}"),
            })?;
        if raw == "NA" {
            return Ok(None);
        }
        raw.parse::<f64>().map(Some).map_err(|e| Error::Parse {
            path: "metrics.csv".into(),
            line: 0,
            message: format!("{name}: {e}"),
        })
    };
    let required = |name: &str| -> Result<f64> {
        field(name)?.ok_or_else(|| Error::Parse {
            path: "metrics.csv".into(),
            line: 0,
            message: format!("{name} may not be NA"),
        })
    };
    Ok(MetricsReport {
        cr: required("CR")?,
        mer: required("MER")?,
        mpb: required("MPB")?,
        appt: field("APPT")?,
        sr: field("SR")?,
        nt: required("NT")? as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_mer(c: &[f64]) -> f64 {
        let mut best = 0.0f64;
        for x in 0..c.len() {
            for y in 0..x {
                if c[y] < c[x] {
                    best = best.max((c[x] - c[y]) / c[y]);
                }
            }
        }
        best
    }

    fn brute_mpb(c: &[f64]) -> f64 {
        let mut best = 0.0f64;
        for x in 0..c.len() {
            for y in 0..x {
                if c[y] > c[x] {
                    best = best.max((c[y] - c[x]) / c[y]);
                }
            }
        }
        best
    }

    #[test]
    fn examples() {
        assert!((cumulative_return(&[1_000_000.0, 1_500_000.0, 1_908_100.0]).unwrap() - 0.9081).abs() < 1e-12);
        assert_eq!(cumulative_return(&[5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(cumulative_return(&[3.0, 6.0]).unwrap(), 1.0);
        assert!(cumulative_return(&[]).is_err());

        assert_eq!(max_earning_rate(&[5.0, 4.0, 3.0]), 0.0);
        assert!((max_earning_rate(&[100.0, 50.0, 120.0]) - 1.4).abs() < 1e-15);
        assert_eq!(max_earning_rate(&[100.0, 200.0]), 1.0);

        assert_eq!(max_pullback(&[1.0, 2.0, 3.0]), 0.0);
        assert!((max_pullback(&[100.0, 150.0, 75.0]) - 0.5).abs() < 1e-15);
        assert_eq!(max_pullback(&[100.0, 50.0]), 0.5);

        assert_eq!(appt(&[100.0, 1100.0], 10).unwrap(), Some(100.0));
        assert_eq!(appt(&[100.0, 100.0], 3).unwrap(), Some(0.0));
        assert_eq!(appt(&[100.0, 200.0], 0).unwrap(), None);
        let a = appt(&[1000.0, 1908.1], 37).unwrap().unwrap();
        assert!((a - 908.1 / 37.0).abs() < 1e-12);
    }

    #[test]
    fn sharpe_edge_cases() {
        let growing: Vec<f64> = (0..50).map(|t| 100.0 * 1.01f64.powi(t)).collect();
        assert_eq!(sharpe(&growing, 0.0, 252.0), None);
        assert_eq!(sharpe(&[1.0, 1.0, 1.0], 0.0, 252.0), None);
        let curve = [100.0, 101.0, 100.5, 102.0, 101.0];
        let r = daily_returns(&curve);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let s = sharpe(&curve, mean * 252.0, 252.0).unwrap();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip_with_na() {
        let report = MetricsReport {
            cr: 0.9081,
            mer: 1.135,
            mpb: 0.4551,
            appt: None,
            sr: Some(1.154),
            nt: 0,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("metric,value\nCR,0.9081\n"));
        assert!(text.contains("APPT,NA\n"));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), report);
    }

    proptest! {
        #[test]
        fn fast_scans_match_brute_force(curve in prop::collection::vec(1.0f64..1000.0, 1..120)) {
            prop_assert!((max_earning_rate(&curve) - brute_mer(&curve)).abs() <= 1e-12 * brute_mer(&curve).max(1.0));
            prop_assert!((max_pullback(&curve) - brute_mpb(&curve)).abs() <= 1e-12);
            let mpb = max_pullback(&curve);
            prop_assert!((0.0..1.0).contains(&mpb));
        }

        #[test]
        fn scale_invariant(curve in prop::collection::vec(1.0f64..1000.0, 2..80), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = curve.iter().map(|v| v * k).collect();
            let tol = |a: f64| 1e-9 * a.abs().max(1.0);
            let cr = cumulative_return(&curve).unwrap();
            prop_assert!((cumulative_return(&scaled).unwrap() - cr).abs() <= tol(cr));
            prop_assert!((max_earning_rate(&scaled) - max_earning_rate(&curve)).abs() <= tol(max_earning_rate(&curve)));
            prop_assert!((max_pullback(&scaled) - max_pullback(&curve)).abs() <= 1e-12);
        }

        #[test]
        fn appending_the_max_keeps_mer(curve in prop::collection::vec(1.0f64..1000.0, 1..80)) {
            let before = max_earning_rate(&curve);
            let top = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut longer = curve.clone();
            longer.push(top);
            prop_assert!(max_earning_rate(&longer) >= before);
        }
    }
}
