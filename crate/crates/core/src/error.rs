use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// No RANSAC hypothesis reached the required inlier fraction.
    #[error("fit failure: {0}")]
    FitFailure(String),

    /// The fit exists but its normal equations are rank deficient.
    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("{path}:{line}: {message}")]
    Data { path: String, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
