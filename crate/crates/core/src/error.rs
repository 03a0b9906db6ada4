use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("unrecognized format: expected magic {expected:?}")]
    UnrecognizedFormat { expected: &'static str },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error("non-finite data{}", context.as_ref().map(|c| format!(" in {c}")).unwrap_or_default())]
    NonFinite { context: Option<String> },

    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate bandwidth: all points coincide")]
    DegenerateBandwidth,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("not enough distinct neighbors: need {needed}, point {point} has {found}")]
    NotEnoughNeighbors {
        point: usize,
        needed: usize,
        found: usize,
    },
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: Some(context.into()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
