use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("model digest mismatch: bitstream was encoded with {expected}, checkpoint is {got}")]
    DigestMismatch { expected: String, got: String },

    #[error("corrupt bitstream: {0}")]
    Corrupt(String),

    #[error("coder error: {0}")]
    Coder(String),

    #[error("invalid R-D curve: {0}")]
    Curve(String),

    #[error("R-D curves share no overlapping interval")]
    NoOverlap,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
