use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing frame file: {}", .0.display())]
    MissingFrame(PathBuf),

    #[error("invalid image {}: {reason}", path.display())]
    InvalidImage { path: PathBuf, reason: String },

    #[error("duplicate frame path at index {0}")]
    DuplicateFrame(usize),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sequence too short: need at least {required} frames, got {actual}")]
    SequenceTooShort { required: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training set has a single class")]
    SingleClass,

    #[error("direction mismatch: model is {model}, context is {context}")]
    DirectionMismatch { model: String, context: String },

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
