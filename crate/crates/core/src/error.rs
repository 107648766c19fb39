use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Integrator parameters outside the admissible box.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    /// Training data that cannot produce a well-defined weight matrix.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A metric divided by a vanishing reference value.
    #[error("zero reference value at index {index}")]
    ZeroReference { index: usize },

    #[error("malformed data file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
