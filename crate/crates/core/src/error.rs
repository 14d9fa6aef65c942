use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor dimension did not match what an op requires.
    #[error("{op}: {dim} mismatch (expected {expected}, got {got})")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward: {0}")]
    Backward(String),

    #[error("image format error in {path}: {msg}")]
    ImageFormat { path: PathBuf, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint config hash {found:#018x} does not match the requested config {expected:#018x}")]
    ConfigHashMismatch { expected: u64, found: u64 },

    #[error("non-finite loss at step {step} (gamma_t = {gamma}, batch element {batch_index})")]
    NonFiniteLoss { step: u64, gamma: f64, batch_index: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
