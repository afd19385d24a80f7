use std::io;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    /// Malformed text input, with a 1-based line number.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// Malformed binary input.
    #[error("invalid {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    /// Input that parses but violates a data invariant.
    #[error("{0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Model and input disagree (e.g. embedding dimensionality).
    #[error("configuration mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
