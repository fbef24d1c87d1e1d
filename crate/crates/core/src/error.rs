use std::path::PathBuf;

use thiserror::Error;

use crate::data::ValidationReport;
use crate::gateway::GatewayError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or invariant of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid dataset: {0}")]
    Dataset(ValidationReport),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// A degenerate chain of thought: nothing left after splitting.
    #[error("degenerate chain of thought: no non-empty steps")]
    DegenerateCot,

    #[error("run {0} is locked by another process (remove the .lock file if stale)")]
    Locked(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure originated in model transport (network, 5xx, timeouts).
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Gateway(g) if g.is_transport())
    }
}
