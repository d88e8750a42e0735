use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: dimension mismatch, expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: window too short, length {len} < required {need}")]
    WindowTooShort {
        op: &'static str,
        len: usize,
        need: usize,
    },

    #[error("{op}: reduction over empty axis {axis}")]
    EmptyReduction { op: &'static str, axis: usize },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("optimizer: non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("container: {0}")]
    Format(String),

    #[error("container i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        expected: expected.into(),
        got: got.into(),
    }
}
