use std::io;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("input `{0}` is not bound")]
    MissingInput(String),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `q` puts zero mass on a cell where `p` is positive.
    #[error("KL divergence is infinite: q vanishes where p = {p} (cell {index})")]
    InfiniteKl { index: usize, p: f64 },

    #[error("Legendre inversion failed: {0}")]
    NoConvergence(String),

    #[error("malformed IDX file: {0}")]
    Idx(String),

    #[error("malformed model snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
