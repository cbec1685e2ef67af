use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("enumeration budget exceeded: {what} requires {required} items, budget is {budget}")]
    BudgetExceeded {
        what: &'static str,
        required: u128,
        budget: u128,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no reward for terminal {0:?}")]
    MissingReward(String),

    #[error("reward mismatch for {terminal}: stored {stored}, got {got}")]
    RewardMismatch {
        terminal: String,
        stored: f64,
        got: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("setting violates shared-substring uniqueness: {0}")]
    Uniqueness(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BudgetExceeded { .. } => "budget",
            Error::DimensionMismatch { .. } => "dimension",
            Error::MissingReward(_) => "missing_reward",
            Error::RewardMismatch { .. } => "reward_mismatch",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "argument",
            Error::Uniqueness(_) => "uniqueness",
            Error::Checkpoint(_) => "checkpoint",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
