//! Experiment harness for `zobilevel`: TOML configs, concurrent trials,
//! per-trial and aggregate CSVs, and SVG convergence plots.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod experiment;
pub mod svg;

pub use aggregate::{aggregate, median_curve, AggregatePoint};
pub use config::{ExperimentConfig, SolverConfig};
pub use error::CliError;
pub use experiment::{compare, run_experiment, run_trials, ExperimentResult, MergedRow, TrialRow};
