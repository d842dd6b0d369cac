use std::path::PathBuf;

/// Errors raised by dataset loading and measure computation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: no examples survived loading")]
    EmptyDataset { path: PathBuf },
    #[error("duplicate example id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("embedding file has no row for example id {id:?}")]
    MissingEmbedding { id: String },
    #[error("embedding row {line}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding row {line}: non-finite value {value:?}")]
    NonFiniteValue { line: usize, value: String },
    #[error("zero-length encoding for example {id:?}; cosine distance is undefined")]
    ZeroVector { id: String },
    #[error("entropy is undefined for an empty n-gram profile")]
    UndefinedEntropy,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("record parse error at line {line}: {reason}")]
    RecordParse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
