use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("probability out of range [0, 1]: {0}")]
    ProbabilityDomain(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty bit string")]
    EmptyBitString,

    #[error(
        "reconciliation left {residual_errors} residual error(s) after {passes} passes (seed {seed})"
    )]
    VerificationFailed {
        residual_errors: usize,
        passes: usize,
        seed: u64,
    },

    #[error("malformed transcript dump at line {line}: {reason}")]
    TranscriptFormat { line: usize, reason: String },

    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
