use std::path::PathBuf;

use mrvol_core::BlockAddress;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] mrvol_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Png(String),
    #[error("visible set of {visible} blocks does not fit a cache of {capacity}")]
    Capacity { visible: usize, capacity: usize },
    #[error("block {addr}: {source}")]
    Block { addr: BlockAddress, source: Box<Error> },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    /// Process exit code: 2 usage, 3 data or format, 4 capacity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Capacity { .. } => 4,
            Error::Block { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
