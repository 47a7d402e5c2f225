//! Intraday volume-ratio forecasting and VWAP execution research stack.
//!
//! The crate is organised bottom-up:
//!
//! - [`marketdata`]: minute bars, trading days, CSV I/O, a seeded synthetic
//!   generator, VWAP and volatility-interruption flags.
//! - [`features`]: log-ratio targets, z-scoring, time encodings and the
//!   context/horizon windows the forecasters consume.
//! - [`numcore`]: dense tensors with a reverse-mode autodiff tape.
//! - [`model`]: the transformer encoder-decoder with a Student-t head and
//!   the recurrent baselines.
//! - [`training`]: AdamW, the mini-batch training loop and point metrics.
//! - [`analysis`]: OLS with inference statistics, spike regressions and the
//!   spike gate, and the market-feature performance regression.
//! - [`execsim`]: quantity allocation and the two-sweep execution simulator.
//! - [`cli`]: run configuration and the pipelines behind the `ive` binary.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod execsim;
pub mod features;
pub mod marketdata;
pub mod model;
pub mod numcore;
pub mod training;

pub use error::{Error, Result};
