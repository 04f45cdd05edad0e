//! Dataset IO, experiment harness, persistence and plotting around `tsc-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod dump;
pub mod error;
pub mod plot;
pub mod results;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::LabError;
pub use results::{ResultRow, ResultsTable};
pub use runner::{run_experiment, run_sweep};
