use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("invalid frame volume: {0}")]
    Volume(String),

    #[error("interest point ({x}, {y}, {t}) lacks filter support at scale ({sigma_s}, {sigma_t})")]
    OutOfSupport {
        x: usize,
        y: usize,
        t: usize,
        sigma_s: f64,
        sigma_t: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("class {0} has no samples")]
    MissingClass(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("value {value} outside {range}")]
    OutOfRange { value: f64, range: &'static str },

    #[error("config hash mismatch for {artifact}: recorded {recorded}, current {current} (use --force to override)")]
    HashMismatch {
        artifact: String,
        recorded: String,
        current: String,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }
}
