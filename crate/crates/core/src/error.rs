use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the pretraining and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error in {file}: {message} (byte offset {offset})")]
    Parse {
        file: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("empty sequence `{0}`: zero frames")]
    EmptySequence(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("batch error: inconsistent shapes for samples {ids:?}")]
    Batch { ids: Vec<String> },

    #[error("empty batch")]
    EmptyBatch,

    #[error("partition error: {intra} + {inter} != batch size {batch}")]
    Partition {
        intra: usize,
        inter: usize,
        batch: usize,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no person found on frame {frame_index}")]
    NoPersonFound { frame_index: usize },

    #[error("empty caption for sample `{0}`")]
    EmptyCaption(String),

    #[error("transport error (retryable): {0}")]
    Transport(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("missing prompts for samples {0:?}")]
    MissingPrompts(Vec<String>),

    #[error("non-finite loss at epoch {epoch}, step {step}; batch ids {ids:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        ids: Vec<String>,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Whether a caller may retry the failed operation.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
