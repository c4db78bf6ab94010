use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use chrono::Datelike;
use clstm_core::backtest::{make_schedule, replay_equity, run_backtest, write_report, TRAINED_THROUGH_RECORD};
use clstm_core::env::{read_equity_csv, read_trades_csv};
use clstm_core::market::{align_panel, load_ohlcv_multi, read_panel_csv, write_panel_csv, BarSeries, IndicatorParams, Panel};
use clstm_core::metrics::{buy_and_hold_index, compute_metrics, read_metrics_csv, MetricsReport};
use clstm_core::ppo::write_train_log;
use clstm_core::strategy::{ClstmPpo, Strategy, StrategyRegistry};
use clstm_core::synthetic::prepare;
use clstm_core::Error;

use crate::config::RunConfig;
use crate::UsageError;

pub struct Ingested {
    pub panel: Panel,
    pub dropped: Vec<String>,
}

/// Loads, filters and aligns the raw files, then fills indicators and turbulence.
pub fn ingest_raw(config: &RunConfig) -> Result<Ingested> {
    let data = &config.data;
    if data.files.is_empty() {
        return Err(UsageError("no input: set data.files or data.panel".into()).into());
    }
    let mut series: Vec<BarSeries> = Vec::new();
    for path in &data.files {
        series.extend(load_ohlcv_multi(path)?);
    }
    if !data.tickers.is_empty() {
        for t in &data.tickers {
            if !series.iter().any(|s| &s.ticker == t) {
                return Err(Error::Alignment(format!("ticker {t} not found in the input files")).into());
            }
        }
        series.retain(|s| data.tickers.contains(&s.ticker));
    }
    if let Some(end) = data.end {
        for s in &mut series {
            s.bars.retain(|b| b.date <= end);
        }
    }
    let aligned = align_panel(&series, data.start)?;
    let panel = prepare(&aligned.panel, &IndicatorParams::default(), &config.turbulence())?;
    let dropped = aligned
        .dropped
        .iter()
        .map(|d| format!("{} ({} missing days)", d.ticker, d.missing_days))
        .collect();
    Ok(Ingested { panel, dropped })
}

fn load_panel(config: &RunConfig) -> Result<Panel> {
    match &config.data.panel {
        Some(path) => Ok(read_panel_csv(path)?),
        None => Ok(ingest_raw(config)?.panel),
    }
}

pub fn ingest(config: &RunConfig) -> Result<()> {
    let Ingested { panel, dropped } = ingest_raw(config)?;
    config.echo(&config.out)?;
    let path = config.out.join("panel.csv");
    let mut out = BufWriter::new(File::create(&path)?);
    write_panel_csv(&panel, &mut out)?;
    out.flush()?;

    println!("tickers kept: {} ({})", panel.n_stocks(), panel.tickers.join(", "));
    if dropped.is_empty() {
        println!("tickers dropped: none");
    } else {
        println!("tickers dropped: {}", dropped.join(", "));
    }
    println!(
        "warm-up cutoff: first usable date {} ({} dates through {})",
        panel.dates[0],
        panel.n_dates(),
        panel.dates[panel.n_dates() - 1]
    );
    println!("panel written to {}", path.display());
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    let seed = config.require_seed()?;
    let panel = load_panel(config)?;
    let to = panel
        .dates
        .iter()
        .rposition(|d| *d <= config.data.train_end)
        .ok_or_else(|| Error::Alignment(format!("no panel dates on or before {}", config.data.train_end)))?;
    let env = config.env_config(panel.n_stocks());
    let mut agent = ClstmPpo::new(config.strategy_params(seed), panel.n_stocks())?;
    config.echo(&config.out)?;

    let fit = if config.model.train_steps == 0 {
        Default::default()
    } else {
        agent.fit(&panel, 0, to, &env)?
    };
    let mut ckpt = agent.checkpoint();
    ckpt.push(TRAINED_THROUGH_RECORD, vec![1], vec![panel.dates[to].num_days_from_ce() as f64]);
    ckpt.write_file(config.out.join("model.ckpt"))?;
    write_train_log(&fit.log, BufWriter::new(File::create(config.out.join("train_log.csv"))?))?;

    println!(
        "trained {} steps on {} .. {}, {} updates",
        fit.steps,
        panel.dates[0],
        panel.dates[to],
        fit.log.len()
    );
    if let Some(reason) = fit.divergence {
        return Err(Error::Numerical(format!("training diverged ({reason}); last good parameters kept")).into());
    }
    Ok(())
}

pub fn backtest(config: &RunConfig) -> Result<()> {
    let seed = config.require_seed()?;
    let panel = load_panel(config)?;
    let schedule = make_schedule(&panel.dates, config.data.train_end, config.data.stride_months)?;
    let mut agent = StrategyRegistry::with_builtins().create(&config.strategy, &config.strategy_params(seed), panel.n_stocks())?;
    config.echo(&config.out)?;
    log::info!("{} windows, strategy {}", schedule.windows.len(), config.strategy);

    let env = config.env_config(panel.n_stocks());
    let report = run_backtest(&panel, &schedule, agent.as_mut(), &env, config.env.risk_free_rate)?;
    write_report(&report, &config.out)?;
    if let Some(m) = &report.metrics {
        print_metrics(m);
    }
    println!("report written to {}", config.out.display());
    match report.failure {
        Some(reason) => Err(Error::Numerical(format!("backtest stopped early: {reason}")).into()),
        None => Ok(()),
    }
}

fn fmt_opt(v: Option<f64>, pct: bool) -> String {
    match v {
        None => "NA".into(),
        Some(x) if pct => format!("{:.2}%", 100.0 * x),
        Some(x) => format!("{x:.4}"),
    }
}

pub fn print_metrics(m: &MetricsReport) {
    println!("CR    {}", fmt_opt(Some(m.cr), true));
    println!("MER   {}", fmt_opt(Some(m.mer), true));
    println!("MPB   {}", fmt_opt(Some(m.mpb), true));
    println!("APPT  {}", fmt_opt(m.appt, false));
    println!("SR    {}", fmt_opt(m.sr, false));
    println!("NT    {}", m.nt);
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn same_metrics(a: &MetricsReport, b: &MetricsReport) -> bool {
    let opt = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (None, None) => true,
        (Some(x), Some(y)) => close(x, y),
        _ => false,
    };
    close(a.cr, b.cr) && close(a.mer, b.mer) && close(a.mpb, b.mpb) && opt(a.appt, b.appt) && opt(a.sr, b.sr) && a.nt == b.nt
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    let path = dir.join(name);
    let file = File::open(&path).map_err(Error::from).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

/// Prints stored metrics, checks them against a recomputation and writes
/// `equity_plot.csv`. With market data configured, the trade log is replayed
/// through a fresh environment and a buy-and-hold column is added.
pub fn report(config: &RunConfig, dir: &Path, with_market: bool) -> Result<()> {
    let equity = read_equity_csv(open(dir, "equity.csv")?)?;
    let trades = read_trades_csv(open(dir, "trades.csv")?)?;
    let stored = read_metrics_csv(open(dir, "metrics.csv")?)?;
    if equity.is_empty() {
        return Err(Error::EmptyInput(dir.join("equity.csv").display().to_string()).into());
    }
    let mut curve: Vec<f64> = equity.iter().map(|p| p.portfolio_value).collect();

    let mut index = None;
    if with_market {
        let panel = load_panel(config)?;
        let missing = || Error::Alignment("equity dates are not in the configured panel".into());
        let from = panel.date_index(equity[0].date).ok_or_else(missing)?;
        let to = panel.date_index(equity[equity.len() - 1].date).ok_or_else(missing)?;
        curve = replay_equity(&panel, &config.env_config(panel.n_stocks()), &equity, &trades)?;
        index = Some(buy_and_hold_index(&panel, from, to, 1.0)?);
    }
    let recomputed = compute_metrics(&curve, &trades, config.env.risk_free_rate)?;
    if !same_metrics(&stored, &recomputed) {
        return Err(Error::Contract(format!(
            "metrics.csv disagrees with the recomputed values: stored {stored:?}, recomputed {recomputed:?}"
        ))
        .into());
    }
    print_metrics(&stored);

    let path = dir.join("equity_plot.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    match &index {
        Some(_) => writeln!(w, "date,cumulative_return,buy_and_hold")?,
        None => writeln!(w, "date,cumulative_return")?,
    }
    let start = curve[0];
    for (i, p) in equity.iter().enumerate() {
        let cr = curve[i] / start - 1.0;
        match &index {
            Some(ix) => writeln!(w, "{},{},{}", p.date, cr, ix[i] - 1.0)?,
            None => writeln!(w, "{},{}", p.date, cr)?,
        }
    }
    w.flush()?;
    println!("plot data written to {}", path.display());
    Ok(())
}

/// Config for `report`: an explicit file wins, else the echo saved with the run.
pub fn report_config(explicit: Option<&Path>, dir: &Path) -> Result<RunConfig> {
    let echoed = dir.join("config.toml");
    match explicit {
        Some(p) => RunConfig::load(Some(p)),
        None if echoed.is_file() => RunConfig::load(Some(&echoed)),
        None => Ok(RunConfig::default()),
    }
}
