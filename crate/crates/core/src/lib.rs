//! Multi-timescale recurrent networks for long-memory time series.
//!
//! The crate provides a small reverse-mode differentiation engine
//! ([`ndcore`]), power-law kernel approximation by sums of exponentials
//! ([`kernels`]), LSTM / VLSTM / multi-scale GRU cells ([`cells`]), a
//! forecasting head ([`model`]), realized-volatility data handling
//! ([`data`]), training with early stopping ([`train`]), experiment sweeps
//! with model selection ([`sweep`]) and reference forecasters
//! ([`baselines`]).

pub mod archive;
pub mod baselines;
pub mod cells;
pub mod data;
pub mod error;
pub mod kernels;
mod linalg;
pub mod model;
pub mod ndcore;
pub mod sweep;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
