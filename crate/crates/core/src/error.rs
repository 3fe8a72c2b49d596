use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("patch origin ({y}, {z}) with size {patch:?} lies outside grid {full:?}")]
    OutOfBounds {
        y: i64,
        z: i64,
        patch: (usize, usize),
        full: (usize, usize),
    },

    /// k-space bins that no patch covers; bins are (row, col) on the padded grid.
    #[error("k-space coverage failure: {} uncovered bins, first {:?}", uncovered.len(), uncovered.first())]
    Coverage { uncovered: Vec<(usize, usize)> },

    #[error("mask is not binary at flat index {0}")]
    NonBinaryMask(usize),

    #[error("reduction factor {target} is infeasible, at most {max} is reachable")]
    InfeasibleReduction { target: f64, max: f64 },

    #[error("calibration block has zero energy")]
    ZeroEnergy,

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("patch job {index} failed: {source}")]
    Job { index: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
