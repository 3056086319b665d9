//! Library side of the `tnt` command: configuration loading, output
//! directories, and the `train`, `ablation`, `analyze` and `report`
//! commands. `main.rs` only parses arguments and reports errors.

pub mod ablation;
pub mod analyze;
pub mod config;
pub mod outdir;
pub mod train;

use std::path::Path;

use serde_json::json;
use thiserror::Error;
use tnt_core::analysis::AnalysisError;
use tnt_core::lrm::LrmError;
use tnt_core::trainer::{CheckpointError, TrainError};

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("task set: {0}")]
    Tasks(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<LrmError> for CliError {
    fn from(e: LrmError) -> Self {
        CliError::Tasks(e.to_string())
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Train(_) => "train",
            CliError::Analysis(_) => "analysis",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Tasks(_) => "tasks",
            CliError::Io { .. } => "io",
        }
    }

    /// Configuration mistakes exit with 2, everything else with 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    /// One-line JSON error record for stderr.
    pub fn record(&self, command: &str) -> serde_json::Value {
        let mut error = json!({
            "command": command,
            "kind": self.kind(),
            "message": self.to_string(),
        });
        if let CliError::Config(c) = self {
            error["fields"] = json!(c.fields());
        }
        if let CliError::Train(TrainError::Update { step, .. }) = self {
            error["step"] = json!(step);
        }
        json!({ "error": error })
    }
}
