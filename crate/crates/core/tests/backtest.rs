use chrono::{Datelike, NaiveDate};
use clstm_core::backtest::{make_schedule, replay_equity, run_backtest, write_report, Schedule};
use clstm_core::env::{EnvConfig, Side};
use clstm_core::market::{IndicatorParams, Panel, TurbulenceParams};
use clstm_core::strategy::{StrategyParams, StrategyRegistry};
use clstm_core::synthetic::{business_days, prepare, SyntheticMarket};

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn toy_panel(seed: u64) -> Panel {
    let raw = SyntheticMarket::uniform(3, 63 + 300, 0.0005, 0.02, seed).generate().unwrap();
    let turb = TurbulenceParams {
        lookback: 30,
        ..TurbulenceParams::default()
    };
    prepare(&raw, &IndicatorParams::default(), &turb).unwrap()
}

fn toy_schedule(panel: &Panel, stride: u32) -> Schedule {
    make_schedule(&panel.dates, panel.dates[120], stride).unwrap()
}

fn toy_params(seed: u64) -> StrategyParams {
    let mut p = StrategyParams {
        window: 3,
        lstm_hidden: 6,
        feature_dim: 6,
        policy_hidden: 6,
        train_steps: 64,
        seed,
        ..StrategyParams::default()
    };
    p.hyper.update_frequency = 32;
    p.hyper.minibatch_size = 16;
    p.hyper.epochs = 2;
    p
}

#[test]
fn quarterly_calendar_first_window() {
    let cal = business_days(d(2009, 1, 1), 3000)
        .into_iter()
        .take_while(|x| *x <= d(2020, 5, 8))
        .collect::<Vec<_>>();
    let s = make_schedule(&cal, d(2016, 1, 1), 3).unwrap();
    let first = s.windows[0];
    assert_eq!(first.trade_start, d(2016, 1, 4));
    assert_eq!(first.train_start, d(2009, 1, 1));
    assert_eq!(first.trade_end, d(2016, 4, 1));
    // quarterly boundaries from 2016-01-01 through 2020-04-01, then the partial tail
    assert_eq!(s.windows.len(), 18);
    assert_eq!(s.windows.last().unwrap().trade_end, d(2020, 5, 8));
}

#[test]
fn yearly_stride_over_two_years() {
    let cal: Vec<NaiveDate> = business_days(d(2014, 1, 1), 2000)
        .into_iter()
        .take_while(|x| *x <= d(2018, 1, 1))
        .collect();
    let s = make_schedule(&cal, d(2016, 1, 1), 12).unwrap();
    assert_eq!(s.windows.len(), 2);
    let spans: Vec<(i32, i32)> = s.windows.iter().map(|w| (w.trade_start.year(), w.trade_end.year())).collect();
    assert_eq!(spans, vec![(2016, 2016), (2017, 2018)]);
    let traded: usize = s
        .windows
        .iter()
        .map(|w| cal.iter().filter(|x| **x >= w.trade_start && **x <= w.trade_end).count())
        .sum();
    assert_eq!(traded, cal.iter().filter(|x| **x > d(2016, 1, 1)).count());
}

#[test]
fn holding_cash_without_costs_is_flat() {
    let panel = toy_panel(1);
    let last = *panel.dates.last().unwrap();
    let sched = make_schedule(&panel.dates, panel.dates[200], 120).unwrap();
    assert_eq!(sched.windows.len(), 1);
    assert_eq!(sched.windows[0].trade_end, last);
    let mut params = toy_params(0);
    params.hyper.learning_rate = 0.0;
    let mut hold = StrategyRegistry::with_builtins().create("hold", &params, 3).unwrap();
    let env = EnvConfig {
        cost_rate: 0.0,
        ..EnvConfig::for_stocks(3)
    };
    let r = run_backtest(&panel, &sched, hold.as_mut(), &env, 0.0).unwrap();
    assert!(r.equity.iter().all(|p| p.portfolio_value == env.initial_capital));
    assert!(r.trades.is_empty());
    let m = r.metrics.unwrap();
    assert_eq!((m.cr, m.mer, m.mpb, m.appt, m.sr), (0.0, 0.0, 0.0, None, None));
}

#[test]
fn equity_matches_trade_log_replay_and_carries_across_windows() {
    let panel = toy_panel(2);
    let sched = toy_schedule(&panel, 2);
    assert!(sched.windows.len() >= 4);
    let env = EnvConfig {
        initial_capital: 50_000.0,
        turbulence_threshold: None,
        ..EnvConfig::for_stocks(3)
    };
    let params = toy_params(3);
    let mut agent = StrategyRegistry::with_builtins().create("random", &params, 3).unwrap();
    let r = run_backtest(&panel, &sched, agent.as_mut(), &env, 0.0).unwrap();
    assert!(r.failure.is_none());
    assert!(r.trades.len() > 20);

    // the curve covers exactly the union of trade windows
    let first = panel.date_index(sched.windows[0].trade_start).unwrap();
    let dates: Vec<NaiveDate> = r.equity.iter().map(|p| p.date).collect();
    assert_eq!(dates, panel.dates[first..].to_vec());

    // cash and shares rebuilt from the log alone
    let mut cash = env.initial_capital;
    let mut shares = vec![0i64; 3];
    let mut cursor = 0;
    for point in &r.equity {
        let t = panel.date_index(point.date).unwrap();
        let value = cash + (0..3).map(|k| shares[k] as f64 * panel.adj_close[t][k]).sum::<f64>();
        assert!((value - point.portfolio_value).abs() < 1e-9 * env.initial_capital, "at {}", point.date);
        while cursor < r.trades.len() && r.trades[cursor].date == point.date {
            let tr = &r.trades[cursor];
            let k = panel.tickers.iter().position(|n| *n == tr.ticker).unwrap();
            let gross = tr.price * tr.shares as f64;
            match tr.side {
                Side::Buy => {
                    cash -= gross + tr.cost;
                    shares[k] += tr.shares as i64;
                }
                Side::Sell => {
                    cash += gross - tr.cost;
                    shares[k] -= tr.shares as i64;
                }
            }
            assert!(shares[k] >= 0);
            cursor += 1;
        }
    }
    assert_eq!(cursor, r.trades.len());

    let replayed = replay_equity(&panel, &env, &r.equity, &r.trades).unwrap();
    for (a, b) in replayed.iter().zip(r.equity_values()) {
        assert!((a - b).abs() < 1e-9 * env.initial_capital);
    }

    for pair in r.windows.windows(2) {
        let end = r.equity.iter().find(|p| p.date == pair[0].trade_end).unwrap();
        let start = r.equity.iter().find(|p| p.date == pair[1].trade_start).unwrap();
        assert_eq!(end.balance, start.balance);
    }
}

#[test]
fn trained_backtest_is_reproducible_and_writes_artifacts() {
    let panel = toy_panel(4);
    let sched = toy_schedule(&panel, 4);
    let env = EnvConfig::for_stocks(3);
    let reg = StrategyRegistry::with_builtins();
    let run = || {
        let mut s = reg.create("clstm-ppo", &toy_params(9), 3).unwrap();
        run_backtest(&panel, &sched, s.as_mut(), &env, 0.0).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.checkpoints.len(), sched.windows.len());
    assert!(a.train_logs.iter().all(|l| l.len() == 2));

    let dir = tempfile::tempdir().unwrap();
    write_report(&a, dir.path()).unwrap();
    for f in ["equity.csv", "trades.csv", "metrics.csv", "windows.csv", "train_log_0.csv", "checkpoints/window_0.ckpt"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}
