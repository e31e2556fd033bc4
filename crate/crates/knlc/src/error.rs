use thiserror::Error;

/// Crate-wide error type. `InvalidSpec`/`InvalidInput`/`Parse` indicate bad
/// configuration or data (CLI exit code 2), `Numerics` indicates a failure of
/// the numerical machinery itself (CLI exit code 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cavity or drive specification: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
