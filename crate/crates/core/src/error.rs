use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("control samples do not cover [{lo}, {hi}] (available [{first}, {last}])")]
    Coverage { lo: f64, hi: f64, first: f64, last: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("filter diverged: {0}")]
    Divergence(String),

    #[error("inconsistent construction: {0}")]
    Construction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}
