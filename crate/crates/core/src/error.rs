use std::io;

use crate::bwgan::TrainMetrics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },

    #[error("gradient requested of non-scalar output {node} with shape {shape:?}")]
    NonScalarOutput { node: String, shape: Vec<usize> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dual norm needs a finite conjugate exponent, got p = {0}")]
    DualUndefined(f64),

    #[error("spectral axis of length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("spectral multiplier left an imaginary residue of {0:e}")]
    ImaginaryResidue(f64),

    #[error("measure weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("support of {size} points exceeds the cap of {cap}")]
    SupportTooLarge { size: usize, cap: usize },

    #[error("points coincide; the difference quotient is undefined")]
    CoincidentPoints,

    #[error("empty sample")]
    EmptySample,

    #[error("training diverged at iteration {iteration}")]
    Divergence {
        iteration: usize,
        metrics: Box<TrainMetrics>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(node: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            node: node.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
