//! Desk-scale framework for studying and severing spurious correlations via
//! data pruning: synthetic biased-dataset generation, small-network SGD
//! training, early-epoch sample-difficulty scoring, pruning strategies, and
//! group-robustness evaluation, orchestrated into reproducible experiment
//! suites.
//!
//! All computation is deterministic given a seed: parallel loops use fixed
//! per-element reduction orders, so the `parallel` feature (rayon) changes
//! throughput, never results.

pub mod difficulty;
pub mod distribution;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod experiment;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod testbed;

mod linalg;

pub use error::{Error, Result};
