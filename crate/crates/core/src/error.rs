use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside buffered interval [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("transform buffer is empty")]
    EmptyBuffer,

    #[error("timestamp {t} is not after the last stored timestamp {last}")]
    NonMonotonicTime { t: f64, last: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("invalid state: {0}")]
    InvalidState(&'static str),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("no temporal overlap between estimates and ground truth")]
    NoOverlap,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// Qualifies a parameter error with the section it belongs to.
    pub fn within(self, section: &str) -> Self {
        match self {
            Error::Parameter { name, reason } => Error::Parameter {
                name: format!("{section}.{name}"),
                reason,
            },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
