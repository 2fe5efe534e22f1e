//! Monte Carlo Dropout robustness profiling for small transformer classifiers.
//!
//! The pipeline trains a transformer on a balanced memory/reasoning
//! binary-classification corpus, evaluates it under independently configurable
//! attention and feed-forward dropout, and summarises run-level accuracy
//! distributions with corrected hypothesis tests, effect sizes, tables and
//! figures.

#![forbid(unsafe_code)]

pub mod error;
pub mod io;
pub mod mc_eval;
pub mod model;
pub mod numerics;
pub mod report;
pub mod stats;
pub mod sweep;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
