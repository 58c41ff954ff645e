//! A laboratory for the two-player discrete Almgren-Chriss liquidation game.
//!
//! The crate computes competitive (Nash) and cooperative (TWAP) benchmark
//! schedules under aggregate and own temporary impact, trains ex-ante schedule
//! learners and state-dependent double-DQN agents against the simulator, and
//! measures learned outcomes relative to the benchmarks.

pub mod benchmarks;
pub mod diagnostics;
pub mod dqn;
pub mod error;
pub mod harness;
pub mod market;
pub mod nn;
pub mod schedule;
pub mod seed;

pub use error::{Error, Result};
