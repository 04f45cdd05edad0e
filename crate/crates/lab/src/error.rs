use std::path::PathBuf;

use tsc_core::ppo::PpoError;
use tsc_core::sim::SimError;

use crate::dataset::DataError;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("training: {0}")]
    Ppo(#[from] PpoError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed results table: {message}")]
    Results { path: PathBuf, message: String },
    #[error("{path}: invalid checkpoint: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(
        "vehicle conservation violated at step {step}: entered {entered} != in network {in_network} + exited {exited}"
    )]
    Conservation { step: usize, entered: usize, in_network: usize, exited: usize },
    #[error("run `{run_id}`: {source}")]
    Run { run_id: String, source: Box<LabError> },
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn in_run(self, run_id: &str) -> Self {
        match self {
            e @ Self::Run { .. } => e,
            e => Self::Run { run_id: run_id.to_string(), source: Box::new(e) },
        }
    }

    /// Maps the error onto the command-line exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Data(DataError::Config(_)) => EXIT_CONFIG,
            Self::Data(DataError::Sim(SimError::Config(_))) => EXIT_CONFIG,
            Self::Data(_) => EXIT_DATA,
            Self::Results { .. } | Self::Checkpoint { .. } => EXIT_DATA,
            Self::Sim(SimError::Config(_)) | Self::Ppo(PpoError::Config(_)) => EXIT_CONFIG,
            Self::Ppo(PpoError::Sim(SimError::Config(_))) => EXIT_CONFIG,
            Self::Sim(_) | Self::Ppo(_) | Self::Io { .. } | Self::Conservation { .. } => EXIT_RUNTIME,
            Self::Run { source, .. } => source.exit_code(),
        }
    }
}
