use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid combiner: {0}")]
    InvalidCombiner(String),

    #[error("no default combiner for N={n}; supply an explicit M x N matrix")]
    UnsupportedCombiner { n: usize },

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("non-finite {what} for image {image} at epoch {epoch}")]
    NonFinite {
        what: &'static str,
        image: usize,
        epoch: usize,
    },

    #[error("training diverged at epoch {epoch}: total loss {loss:e} exceeds {limit:e}")]
    Diverged { epoch: usize, loss: f64, limit: f64 },

    #[error("image index {index} out of range 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported PNG in {path}: {detail}")]
    UnsupportedPng { path: PathBuf, detail: String },

    #[error("malformed PNG in {path}: {detail}")]
    MalformedPng { path: PathBuf, detail: String },

    #[error(transparent)]
    Bundle(#[from] crate::bundle::BundleError),

    #[error(transparent)]
    Theorem(#[from] crate::convergence::TheoremError),
}
