use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("waveform of {len} samples is too short for one frame (padded length {padded}, kernel width {width})")]
    WaveTooShort {
        len: usize,
        padded: usize,
        width: usize,
    },

    #[error("non-finite gradient for parameter {0}; step rejected")]
    NonFiniteGradient(String),

    #[error("unknown speaker {0}")]
    UnknownSpeaker(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame misalignment: {0}")]
    Alignment(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("model capability: {0}")]
    Capability(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("empty support: {0}")]
    EmptySupport(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
