use std::io;

use thiserror::Error;

use crate::model_store::PageId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed model or dataset content.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("model index {index} out of range for dimension {dimension}")]
    IndexOutOfRange { index: u64, dimension: u64 },

    #[error("page {page} out of range ({num_pages} pages)")]
    PageOutOfRange { page: PageId, num_pages: u64 },

    #[error("vector {tid} requests {pages} pages but the memory budget is {budget}")]
    OversizedVector { tid: u64, pages: usize, budget: usize },

    #[error("set request of {requested} pages exceeds the memory budget of {budget}")]
    RequestTooLarge { requested: usize, budget: usize },

    #[error("no evictable page: all {budget} buffer slots are pinned")]
    BufferExhausted { budget: usize },

    #[error("page {0} is not pinned")]
    NotPinned(PageId),

    #[error("page {0} is not resident")]
    NotResident(PageId),

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: usize, losses: Vec<f64> },
}

/// Coarse failure classes, used to pick process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Precondition,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            Error::InvalidArgument(_)
            | Error::Validation(_)
            | Error::IndexOutOfRange { .. }
            | Error::PageOutOfRange { .. } => ErrorKind::Validation,
            Error::OversizedVector { .. }
            | Error::RequestTooLarge { .. }
            | Error::BufferExhausted { .. }
            | Error::NotPinned(_)
            | Error::NotResident(_)
            | Error::Diverged { .. } => ErrorKind::Precondition,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Validation => 2,
            ErrorKind::Io => 3,
            ErrorKind::Precondition => 4,
        }
    }
}
