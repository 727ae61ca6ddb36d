use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("insufficient frame length: need {needed} samples, got {got}")]
    InsufficientFrameLength { needed: usize, got: usize },

    #[error("invalid f0 bounds: {0}")]
    InvalidF0Bounds(String),

    #[error("lag out of range: lag {lag} needs tau_max >= {needed}, curve has {tau_max}")]
    LagOutOfRange { lag: f64, needed: usize, tau_max: usize },

    #[error("shift out of range: {0} not in [-15, 15]")]
    ShiftOutOfRange(i32),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("no voiced overlap")]
    NoVoicedOverlap,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
