use thiserror::Error;

use crate::flow::EventRecord;
use crate::manifold::ManifoldModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("model mismatch: {0:?} vs {1:?}")]
    ModelMismatch(ManifoldModel, ManifoldModel),

    /// The half-return trajectory left the lower strip (or timed out) before
    /// coming back to the section.
    #[error("no return to section: {:?} at t={}", .exit.kind, .exit.t)]
    NoReturn { exit: Box<EventRecord> },

    #[error("not found: {0}")]
    NotFound(String),

    /// A hypothesis of the requested diagnostic does not hold for the system.
    #[error("precondition refused: {0}")]
    Refused(String),

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
