use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Config,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch at column {index}: expected `{expected}`, found `{found}`")]
    Schema {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("parse error at line {line}, column {column}: cannot read `{token}` as a number")]
    Parse {
        line: usize,
        column: usize,
        token: String,
    },

    #[error("wrong field count at line {line}: expected {expected}, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid label at line {line}: `{token}` is not 0 or 1")]
    Label { line: usize, token: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("only one class present in {0}")]
    SingleClass(&'static str),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("epoch {epoch}, sequence {sequence}: {source}")]
    Training {
        epoch: usize,
        sequence: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Schema { .. }
            | Error::Parse { .. }
            | Error::FieldCount { .. }
            | Error::Label { .. }
            | Error::Json(_) => ErrorKind::Parse,
            Error::InvalidSchema(_)
            | Error::Empty(_)
            | Error::Config(_)
            | Error::Dimension { .. }
            | Error::SingleClass(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Io { .. } => ErrorKind::Io,
            Error::InFile { source, .. }
            | Error::Training { source, .. }
            | Error::Round { source, .. }
            | Error::Fold { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
