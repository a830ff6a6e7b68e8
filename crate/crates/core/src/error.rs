use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the ingest pipeline and the scene memory store.
///
/// Tool dispatch and the query language report failures through their own
/// structured types ([`crate::tools::ToolError`], [`crate::smql::SmqlError`])
/// so that an agent can recover from them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty geometry: {0}")]
    EmptyGeometry(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error in {record}: {message}")]
    Validation { record: String, message: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("client error after {attempts} attempt(s): {message}")]
    Client { attempts: u32, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            record: record.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
