use thiserror::Error;

/// Errors raised by tensor construction, kernels, models and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index error: {0}")]
    Index(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("mode {mode} is out of range for a {ndims}-way tensor")]
    Mode { mode: usize, ndims: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Resource(_) => 3,
            Error::Io(_) | Error::Format(_) => 4,
            _ => 2,
        }
    }
}
