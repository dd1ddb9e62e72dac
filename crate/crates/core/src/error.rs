use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes or lengths that do not line up.
    #[error("structural error: {0}")]
    Structural(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A theorem-level assumption (e.g. the IMEX step bound) does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn parameter(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
