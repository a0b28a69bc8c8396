use std::path::PathBuf;

use crate::ec::EcParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Ec(#[from] EcParseError),

    #[error("{file}: line {line}: {message}")]
    Format { file: String, line: usize, message: String },

    #[error("duplicate FASTA ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("embedding table {table} has no vector for id {id}")]
    MissingEmbedding { table: String, id: String },

    #[error("non-finite value {what}")]
    NonFinite { what: String },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
