use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read WAV file {path}: {reason}")]
    WavUnreadable { path: PathBuf, reason: String },

    #[error("unsupported WAV encoding in {path}: {encoding}")]
    WavUnsupported { path: PathBuf, encoding: String },

    #[error("WAV file {path} contains no audio samples")]
    WavEmpty { path: PathBuf },

    #[error("invalid audio clip: {0}")]
    InvalidClip(String),

    #[error("clip has {samples} samples, shorter than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("topology mismatch: expected {expected}, got {actual}")]
    TopologyMismatch { expected: String, actual: String },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("network has no convolution layer")]
    NoConvLayer,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },

    #[error("box {index} lies outside a {width}x{height} image")]
    BoxOutOfRange { index: usize, width: usize, height: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
