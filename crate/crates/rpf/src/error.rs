use std::io;

use thiserror::Error;

/// Crate-wide error type. The CLI maps variants to process exit codes:
/// configuration/data problems exit 2, numerical failures exit 3.
#[derive(Debug, Error)]
pub enum RpfError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error at row {row}: {msg}")]
    DataRow { row: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no return predicted: total intensity has vanishing mass")]
    NoReturn,

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RpfError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RpfError::Config(_) | RpfError::Data(_) | RpfError::DataRow { .. } | RpfError::Io(_) => 2,
            RpfError::Numerical(_) | RpfError::NoReturn => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, RpfError>;
