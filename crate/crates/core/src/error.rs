use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("backward root must be a scalar, got shape {0}")]
    NonScalarRoot(Shape),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("missing activation taps for {0}")]
    MissingTaps(&'static str),

    #[error("domain already injected into the input of {0}")]
    DoubleInjection(String),

    #[error("gradient for unknown parameter {0}")]
    UnknownParameter(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("IDX bad magic: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic { expected: u32, found: u32 },

    #[error("IDX payload truncated: expected {expected} bytes, found {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset provides no ground-truth transform")]
    MissingTransform,

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "training diverged at iteration {iteration}: {what} = {value} (last good checkpoint: {last_checkpoint:?})"
    )]
    Divergence {
        iteration: u64,
        what: &'static str,
        value: f64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
