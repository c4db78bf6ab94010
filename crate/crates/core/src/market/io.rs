use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{Bar, BarSeries, Panel};
use crate::error::{Error, Result};

const OHLCV_COLUMNS: [&str; 8] = [
    "date", "open", "high", "low", "close", "adjclose", "volume", "ticker",
];
const PANEL_HEADER: [&str; 8] = [
    "date",
    "ticker",
    "adjclose",
    "macd",
    "rsi",
    "cci",
    "adx",
    "turbulence",
];

#[derive(Debug, Deserialize)]
struct OhlcvRow {
    date: NaiveDate,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    adjclose: f64,
    volume: f64,
    ticker: String,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads an OHLCV CSV that may hold several tickers. Series come back in
/// first-appearance order, each sorted by date.
pub fn load_ohlcv_multi(path: impl AsRef<Path>) -> Result<Vec<BarSeries>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers()?.clone();
    for col in OHLCV_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(parse_err(path, 1, format!("missing column `{col}`")));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<Bar>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: OhlcvRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        let bar = Bar {
            date: row.date,
            open: row.open,
            high: row.high,
            low: row.low,
            close: row.close,
            adjusted_close: row.adjclose,
            volume: row.volume,
        };
        bar.validate().map_err(|m| parse_err(path, line, m))?;
        if !grouped.contains_key(&row.ticker) {
            order.push(row.ticker.clone());
        }
        grouped.entry(row.ticker).or_default().push(bar);
    }
    if order.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    order
        .into_iter()
        .map(|t| {
            let bars = grouped.remove(&t).unwrap_or_default();
            BarSeries::new(t, bars)
        })
        .collect()
}

/// Reads a single-ticker OHLCV CSV.
pub fn load_ohlcv(path: impl AsRef<Path>) -> Result<BarSeries> {
    let path = path.as_ref();
    let mut all = load_ohlcv_multi(path)?;
    if all.len() != 1 {
        return Err(parse_err(
            path,
            0,
            format!("expected one ticker, found {}", all.len()),
        ));
    }
    Ok(all.remove(0))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes the columnar panel export. Floats use shortest round-trip formatting,
/// so reading the file back reproduces every value bit for bit.
pub fn write_panel_csv(panel: &Panel, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PANEL_HEADER)?;
    for (i, date) in panel.dates.iter().enumerate() {
        for (k, ticker) in panel.tickers.iter().enumerate() {
            w.write_record([
                date.to_string(),
                ticker.clone(),
                panel.adj_close[i][k].to_string(),
                panel.macd[i][k].to_string(),
                panel.rsi[i][k].to_string(),
                panel.cci[i][k].to_string(),
                panel.adx[i][k].to_string(),
                fmt_opt(panel.turbulence[i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a panel export. The file carries no OHLC detail, so high, low and
/// close are filled with the adjusted close.
pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<Panel> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers()?.clone();
    if headers.iter().ne(PANEL_HEADER.iter().copied()) {
        return Err(parse_err(path, 1, format!("expected header {}", PANEL_HEADER.join(","))));
    }

    let mut tickers: Vec<String> = Vec::new();
    let mut dates: Vec<NaiveDate> = Vec::new();
    // per date: values in ticker order
    let mut rows: Vec<Vec<[f64; 5]>> = Vec::new();
    let mut turbulence: Vec<Option<f64>> = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let date: NaiveDate = record[0]
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad date: {e}")))?;
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| parse_err(path, line, format!("column {}: {e}", PANEL_HEADER[i])))
        };
        let values = [num(2)?, num(3)?, num(4)?, num(5)?, num(6)?];
        let turb = match &record[7] {
            "NA" => None,
            _ => Some(num(7)?),
        };

        if dates.last() != Some(&date) {
            if dates.last().is_some_and(|d| *d > date) {
                return Err(parse_err(path, line, "dates out of order"));
            }
            dates.push(date);
            rows.push(Vec::new());
            turbulence.push(turb);
        }
        let slot = rows.last_mut().expect("pushed above");
        let k = slot.len();
        if dates.len() == 1 {
            tickers.push(record[1].to_string());
        } else if tickers.get(k).map(String::as_str) != Some(&record[1]) {
            return Err(parse_err(path, line, format!("unexpected ticker {}", &record[1])));
        }
        slot.push(values);
    }
    if dates.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    if rows.iter().any(|r| r.len() != tickers.len()) {
        return Err(parse_err(path, 0, "panel has missing (date, ticker) cells"));
    }

    let take = |j: usize| -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().map(|v| v[j]).collect()).collect()
    };
    let prices = take(0);
    let mut panel = Panel::from_close_prices(tickers, dates, prices)?;
    panel.macd = take(1);
    panel.rsi = take(2);
    panel.cci = take(3);
    panel.adx = take(4);
    panel.turbulence = turbulence;
    Ok(panel)
}
