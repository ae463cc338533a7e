use std::path::PathBuf;

use thiserror::Error;

use crate::model::Attribute;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown attribute `{0}` (expected title, author or subject)")]
    UnknownAttribute(String),
    #[error("invalid term `{0}`")]
    InvalidTerm(String),
    #[error("record title is empty")]
    EmptyTitle,
    #[error("record has an empty subject value")]
    EmptySubject,
    #[error("query has no search terms")]
    EmptyQuery,
    #[error("predicate on {0} has no terms")]
    EmptyPredicate(Attribute),
}

/// Persistence failures of the dictionary, content knowledge and logs.
#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl StorageError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StorageError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        StorageError::Corrupt {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankError {
    #[error("no databases are registered")]
    NoDatabases,
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("query count must be at least 1")]
    ZeroCount,
    #[error("corpus yielded only {produced} of {requested} queries within the retry budget")]
    InsufficientCorpus { requested: usize, produced: usize },
    #[error("database `{db_id}` is unreachable: {reason}")]
    DatabaseUnreachable { db_id: String, reason: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Errors while loading a simulated corpus file.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate system id `{id}`")]
    DuplicateSystemId { id: String, line: usize },
    #[error("invalid database id `{0}`")]
    InvalidDbId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("attribute {0} is not supported by this database")]
    Unsupported(Attribute),
}

/// Malformed wire-protocol input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} (line: {line:?})")]
pub struct ProtocolError {
    pub line: String,
    pub message: String,
}

impl ProtocolError {
    pub(crate) fn new(line: impl Into<String>, message: impl Into<String>) -> Self {
        ProtocolError {
            line: line.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("timed out")]
    Timeout,
    #[error("connection refused")]
    ConnectionRefused,
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[source] std::io::Error),
}

impl GatewayError {
    pub(crate) fn from_io(e: std::io::Error) -> Self {
        use std::io::ErrorKind;
        match e.kind() {
            ErrorKind::TimedOut | ErrorKind::WouldBlock => GatewayError::Timeout,
            ErrorKind::ConnectionRefused => GatewayError::ConnectionRefused,
            _ => GatewayError::Io(e),
        }
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule expression `{0}`")]
    Invalid(String),
}

/// Failures of broker-level operations.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Query(#[from] ModelError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("unknown database `{0}`")]
    UnknownDatabase(String),
    #[error("no database selected")]
    NoSelection,
    #[error("the training library is empty")]
    EmptyLibrary,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}
