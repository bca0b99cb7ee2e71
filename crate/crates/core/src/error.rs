use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported architecture `{0}`")]
    UnsupportedArch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector for `{0}`")]
    ZeroVector(String),

    #[error("invalid configuration for `{field}`: {msg}")]
    Config { field: &'static str, msg: String },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model has not been trained")]
    Untrained,

    #[error("word `{0}` is missing from the lexicon")]
    MissingWord(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Config { field, msg: msg.into() }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { what, msg: msg.into() }
    }
}
