use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value object failed its construction invariants.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Simulation blew up; `sample` is the first index at which the state left the finite range.
    #[error("simulation diverged at sample {sample}")]
    Divergence { sample: usize },

    #[error("least-squares problem is rank deficient: rank {rank} < {unknowns} unknowns from {lines} frequency lines")]
    RankDeficient {
        rank: usize,
        unknowns: usize,
        lines: usize,
    },

    #[error("signal is identically zero; {0} is undefined")]
    ZeroSignal(&'static str),

    #[error("{path}: row {row}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
