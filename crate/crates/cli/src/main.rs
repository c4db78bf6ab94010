//! `clstm`: ingest market data, train, backtest and report.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use clstm_core::ErrorKind;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "clstm", version, about = "Cascaded-LSTM PPO stock trading")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; required by train and backtest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align raw OHLCV files into a panel with indicators and turbulence.
    Ingest,
    /// Train one policy on the initial training range.
    Train {
        /// Environment steps, overriding model.train_steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the rolling retrain-and-trade backtest.
    Backtest {
        /// Registered strategy name.
        #[arg(long, conflicts_with = "random_agent")]
        strategy: Option<String>,
        /// Shorthand for `--strategy random`, the comparison baseline.
        #[arg(long)]
        random_agent: bool,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Print metrics for a report directory and write plot data.
    Report {
        /// Defaults to the output directory.
        dir: Option<PathBuf>,
        /// Skip the trade-log replay and buy-and-hold column even when market data is configured.
        #[arg(long)]
        no_market: bool,
    },
}

/// Bad invocation or configuration; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<clstm_core::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            };
        }
    }
    2
}

fn apply_flags(config: &mut RunConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Report { dir, no_market } => {
            let dir = dir.clone().or_else(|| cli.out.clone()).unwrap_or_else(|| RunConfig::default().out);
            let mut config = commands::report_config(cli.config.as_deref(), &dir)?;
            apply_flags(&mut config, &cli);
            let with_market = !no_market && (config.data.panel.is_some() || !config.data.files.is_empty());
            commands::report(&config, &dir, with_market)
        }
        command => {
            let mut config = RunConfig::load(cli.config.as_deref())?;
            apply_flags(&mut config, &cli);
            match command {
                Command::Ingest => commands::ingest(&config),
                Command::Train { steps } => {
                    if let Some(s) = steps {
                        config.model.train_steps = *s;
                    }
                    commands::train(&config)
                }
                Command::Backtest { strategy, random_agent, steps } => {
                    if let Some(s) = strategy {
                        config.strategy = s.clone();
                    }
                    if *random_agent {
                        config.strategy = "random".into();
                    }
                    if let Some(s) = steps {
                        config.model.train_steps = *s;
                    }
                    commands::backtest(&config)
                }
                Command::Report { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
