use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while building market inputs, running a simulation, or
/// reading/writing its files.
#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("index out of range: {what} {index} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("buyer {buyer}: allocated fraction {sum} exceeds 1")]
    ColumnOverflow { buyer: usize, sum: f64 },

    #[error("missing trace entry for prosumer `{prosumer}` at period {period}")]
    MissingTrace { prosumer: String, period: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl MarketError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        MarketError::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MarketError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (as opposed to I/O failures).
    pub fn is_validation(&self) -> bool {
        !matches!(self, MarketError::Io { .. })
    }
}

pub type Result<T, E = MarketError> = std::result::Result<T, E>;
