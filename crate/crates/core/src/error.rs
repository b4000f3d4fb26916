use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading and validating input files.
///
/// Row-level problems carry the 1-based line number of the offending row
/// (the header is line 1).
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: u64,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate {what} `{id}`")]
    Duplicate { line: u64, what: String, id: String },
    #[error("line {line}: unknown region_id `{id}`")]
    UnknownRegion { line: u64, id: String },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("line {line}: {source}")]
    Csv {
        line: u64,
        #[source]
        source: csv::Error,
    },
    #[error("line {line}: invalid json: {source}")]
    Json {
        line: u64,
        #[source]
        source: serde_json::Error,
    },
}

impl IngestError {
    pub(crate) fn field(line: u64, field: &str, message: impl Into<String>) -> Self {
        IngestError::Field {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }

    /// Line number the error refers to, when it concerns a single row.
    pub fn line(&self) -> Option<u64> {
        match self {
            IngestError::Field { line, .. }
            | IngestError::Duplicate { line, .. }
            | IngestError::UnknownRegion { line, .. }
            | IngestError::Row { line, .. }
            | IngestError::Csv { line, .. }
            | IngestError::Json { line, .. } => Some(*line),
            IngestError::Io { .. } | IngestError::Header { .. } => None,
        }
    }
}
