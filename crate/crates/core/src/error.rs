use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("ambiguous label for image {image_id}: expected exactly one 1.0 column, found {ones}")]
    AmbiguousLabel { image_id: String, ones: usize },

    #[error("duplicate image id {0} in manifest")]
    DuplicateId(String),

    #[error("failed to load image {path}: {reason}")]
    ImageLoad { path: PathBuf, reason: String },

    #[error("missing or unreadable image files for ids: {}", .0.join(", "))]
    MissingImages(Vec<String>),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("weights error: {0}")]
    Weights(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite loss {loss} at step {step} (lr {lr:e}); batch ids: {}", .batch_ids.join(", "))]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        lr: f64,
        batch_ids: Vec<String>,
    },

    #[error("step {step} out of range for a plan of {total} steps")]
    StepOutOfRange { step: usize, total: usize },

    #[error("invalid label index {0}")]
    InvalidLabel(usize),

    #[error("length mismatch: {left} predictions vs {right} truths")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint error (format version {version}): {reason}")]
    Checkpoint { version: u32, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for user/input errors, 1 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::NonFiniteLoss { .. } => 1,
            _ => 2,
        }
    }
}
