use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Too few data points for the requested fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Malformed or inconsistent input (dimension mismatch, non-finite
    /// coordinates, invalid parameter combinations, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical routine produced non-finite or otherwise unusable output.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// File or directory level I/O problem.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not parse.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
