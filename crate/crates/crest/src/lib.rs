//! Experiment harness for class-rebalancing self-training: config
//! ingestion, runs, parameter sweeps and SVG plots.

pub mod config;
pub mod error;
pub mod plot;
pub mod run;
pub mod sweep;

pub use config::{DatasetSpec, RunConfig, RunMode, SyntheticSpec};
pub use error::{CliError, Result};
