use std::path::PathBuf;

use accel_leak::attacks::AttackError;
use accel_leak::binpack::BinError;
use accel_leak::mellin::MellinError;
use accel_leak::model::ModelError;
use accel_leak::stats::StatsError;
use accel_leak::tracegen::TraceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("expected the attack to be {expected}, it was {got}")]
    Expectation { expected: String, got: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Mellin(#[from] MellinError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 when an attack outcome contradicts the config's expectation, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Expectation { .. } => 1,
            _ => 2,
        }
    }
}
