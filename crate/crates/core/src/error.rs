use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("{what} index {index} out of range (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("read from empty memory")]
    EmptyMemory,
    #[error("memory is sealed; append rejected")]
    SealedMemory,
    #[error("engine has already processed {0} steps")]
    NonFreshEngine(usize),
    #[error("encoder memory already loaded")]
    AlreadyLoaded,
    #[error("encoder memory has not been loaded")]
    EncoderMemoryMissing,
    #[error("invalid weight file: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
