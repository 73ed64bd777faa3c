use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside the supported domain: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid layer specification: {0}")]
    Layer(String),

    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown activation `{0}`")]
    UnknownActivation(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("cannot normalize channel {channel} of layer {layer}: propagated variance is zero")]
    DegenerateChannel { layer: usize, channel: usize },

    #[error("operation requires a recorded forward pass: {0}")]
    MissingRecording(&'static str),

    #[error("{0} is not differentiable in sample mode")]
    NotDifferentiable(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize },

    #[error("{path}: bad magic number {found} (expected {expected})")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: truncated file, need {needed} bytes, found {found}")]
    Truncated { path: PathBuf, needed: usize, found: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn layer(msg: impl Into<String>) -> Self {
        Error::Layer(msg.into())
    }
}
