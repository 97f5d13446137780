use alloc::string::String;

use crate::linalg::LinalgError;
use crate::wire::WireError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("nothing trainable: every layer is frozen")]
    NothingTrainable,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("degenerate kernel: all pooled points are identical")]
    DegenerateKernel,
    #[error("aggregation: {0}")]
    Aggregation(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
