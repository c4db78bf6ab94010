use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub date: NaiveDate,
    pub ticker: String,
    pub side: Side,
    pub shares: u64,
    pub price: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquityPoint {
    pub date: NaiveDate,
    pub portfolio_value: f64,
    pub balance: f64,
    pub turbulence: Option<f64>,
    pub halted: bool,
}

pub fn write_trades_csv(trades: &[TradeRecord], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["date", "ticker", "side", "shares", "price", "cost"])?;
    for t in trades {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trades_csv(input: impl Read) -> Result<Vec<TradeRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_equity_csv(points: &[EquityPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "portfolio_value", "balance", "turbulence", "halted"])?;
    for p in points {
        w.write_record([
            p.date.to_string(),
            p.portfolio_value.to_string(),
            p.balance.to_string(),
            p.turbulence.map_or_else(|| "NA".into(), |v| v.to_string()),
            p.halted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_equity_csv(input: impl Read) -> Result<Vec<EquityPoint>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse {
            path: "equity.csv".into(),
            line,
            message: format!("bad {what}"),
        };
        if record.len() != 5 {
            return Err(bad("column count"));
        }
        out.push(EquityPoint {
            date: record[0].parse().map_err(|_| bad("date"))?,
            portfolio_value: record[1].parse().map_err(|_| bad("portfolio_value"))?,
            balance: record[2].parse().map_err(|_| bad("balance"))?,
            turbulence: match &record[3] {
                "NA" => None,
                v => Some(v.parse().map_err(|_| bad("turbulence"))?),
            },
            halted: record[4].parse().map_err(|_| bad("halted"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrips() {
        let d = NaiveDate::from_ymd_opt(2016, 1, 4).unwrap();
        let trades = vec![TradeRecord {
            date: d,
            ticker: "AAPL".into(),
            side: Side::Sell,
            shares: 12,
            price: 101.25,
            cost: 1.215,
        }];
        let mut buf = Vec::new();
        write_trades_csv(&trades, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("date,ticker,side,shares,price,cost\n2016-01-04,AAPL,sell,12,"));
        assert_eq!(read_trades_csv(&buf[..]).unwrap(), trades);

        let equity = vec![
            EquityPoint { date: d, portfolio_value: 1e6, balance: 1e6, turbulence: None, halted: false },
            EquityPoint { date: d.succ_opt().unwrap(), portfolio_value: 1_000_123.5, balance: 10.0 / 3.0, turbulence: Some(42.0), halted: true },
        ];
        let mut buf = Vec::new();
        write_equity_csv(&equity, &mut buf).unwrap();
        assert_eq!(read_equity_csv(&buf[..]).unwrap(), equity);
    }
}
