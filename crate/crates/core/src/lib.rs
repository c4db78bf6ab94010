//! Cascaded-LSTM PPO automated stock trading.
//!
//! The crate is organised bottom-up:
//!
//! * [`market`] loads OHLCV bars, aligns them into a [`market::Panel`] and fills
//!   technical indicators plus the turbulence index.
//! * [`env`] is the multi-stock trading MDP.
//! * [`nn`] holds the small differentiable toolkit (linear, LSTM, Gaussian
//!   head, Adam, checkpoints) with hand-written backward passes.
//! * [`extractor`] turns a window of past states into a feature vector.
//! * [`ppo`] is the actor-critic with its own LSTM and the clipped-surrogate
//!   trainer.
//! * [`strategy`] exposes every trading agent behind one trait, registered by
//!   name.
//! * [`backtest`] runs the quarterly rolling retrain/trade protocol and
//!   [`metrics`] scores the resulting equity curve.

pub mod backtest;
pub mod env;
pub mod error;
pub mod extractor;
pub mod market;
pub mod metrics;
pub mod nn;
pub mod ppo;
pub mod strategy;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
