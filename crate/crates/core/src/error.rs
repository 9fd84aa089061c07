use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the `eofm` library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch: {left} vs {right}")]
    GeometryMismatch { left: String, right: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("malformed field file {path}: {reason}")]
    MalformedField { path: PathBuf, reason: String },

    #[error("malformed bubble table: {0}")]
    MalformedBubbles(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("operator is not positive definite (curvature {curvature:e} at iteration {iteration})")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("boundary specification has no Dirichlet segment")]
    NoDirichlet,

    #[error("invalid boundary specification: {0}")]
    InvalidBoundary(String),

    #[error("bubble placement failed after {attempts} attempts ({placed} of {requested} placed)")]
    PlacementFailed {
        attempts: usize,
        placed: usize,
        requested: usize,
    },

    #[error("pyramid of {levels} levels is too deep for a {width}x{height} grid")]
    PyramidTooDeep {
        levels: usize,
        width: usize,
        height: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
