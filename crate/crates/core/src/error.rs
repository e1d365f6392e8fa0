use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file did not match the expected on-disk layout.
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    /// A single feature record failed validation.
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown class {0}")]
    UnknownClass(u32),

    #[error("class {0} is already present in the memory bank")]
    DuplicateClass(u32),

    #[error("estimator mismatch: {0}")]
    EstimatorMismatch(String),

    #[error("no classes learned")]
    NoClasses,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn record(index: usize, reason: impl Into<String>) -> Self {
        Error::InvalidRecord {
            index,
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(reason: impl Into<String>) -> Self {
        Error::InvalidArgument(reason.into())
    }
}
