use alloc::boxed::Box;
use alloc::string::String;

use crate::lod::BlockAddress;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions {dims:?}: {reason}")]
    InvalidDims { dims: [usize; 3], reason: &'static str },

    #[error("grid of {requested} samples exceeds the budget of {budget} samples")]
    Budget { requested: u128, budget: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("{what} out of range: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate extent")]
    DegenerateExtent,

    #[error("block {addr} is visible but not resident")]
    MissingBlock { addr: BlockAddress },

    #[error("block {addr}: {source}")]
    Block { addr: BlockAddress, source: Box<Error> },
}

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { what, detail: detail.into() }
    }

    pub(crate) fn at_block(self, addr: BlockAddress) -> Self {
        Error::Block { addr, source: Box::new(self) }
    }
}
