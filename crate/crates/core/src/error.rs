use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty frame")]
    EmptyFrame,

    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("silent buffer")]
    SilentBuffer,

    #[error("negative gain {0}")]
    NegativeGain(f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("channel count mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("shape mismatch for {name}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient requested before forward: {0}")]
    NoForward(String),

    #[error("session has no channels")]
    NoChannels,

    #[error("session has no reference mix")]
    MissingReference,

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported audio format in {}: {reason}", .path.display())]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("malformed weight file: {0}")]
    WeightFormat(String),

    #[error("unknown tensor {0}")]
    UnknownTensor(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from caller-supplied input (files, configs,
    /// shapes) rather than an engine fault.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFiniteGradient(_) | Error::NonFinite(_) | Error::NoForward(_))
    }
}
