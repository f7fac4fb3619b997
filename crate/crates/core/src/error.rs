use alloc::string::String;

use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("index {index} out of range for extent {extent} ({what})")]
    Index {
        what: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("{op}: input {value} outside the function domain")]
    Domain { op: &'static str, value: f64 },

    #[error("softmax row {row} has no unmasked entries")]
    DegenerateRow { row: usize },

    #[error("memory has no unmasked slots to read")]
    DegenerateMemory,

    #[error("timestamps must be non-decreasing (got {later} after {earlier})")]
    Ordering { earlier: f64, later: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss at iteration {iteration} (lr {lr:e}, gradient norm {grad_norm:e})")]
    Divergence {
        iteration: usize,
        lr: f64,
        grad_norm: f64,
    },

    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
