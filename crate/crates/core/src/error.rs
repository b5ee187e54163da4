use std::path::PathBuf;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("malformed binary data: {0}")]
    Format(String),

    #[error("non-finite gradient in parameter `{param}` ({count} bad entries, first at index {first_index})")]
    NonFiniteGradient {
        param: String,
        count: usize,
        first_index: usize,
    },

    #[error("gradient check failed: max relative error {max_rel_error:.3e} exceeds {tolerance:.3e}; worst: {worst}")]
    GradCheck {
        max_rel_error: f64,
        tolerance: f64,
        worst: String,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
