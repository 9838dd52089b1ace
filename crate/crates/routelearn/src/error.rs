//! Crate-wide error type.

use crate::roadnet::RouteQuery;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A vector or matrix had the wrong shape for the operation.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// An id referred to an entity that does not exist.
    #[error("unknown {entity} id {id}")]
    UnknownId { entity: &'static str, id: usize },

    /// A loaded file could not be parsed.
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    /// A loaded or constructed value violates a structural invariant.
    #[error("validation failed for {entity} {id}: {reason}")]
    Validation {
        entity: &'static str,
        id: usize,
        reason: String,
    },

    /// An index was outside its valid range.
    #[error("{what} {index} out of range (0..{len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// A numeric argument was outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// No path exists between the query's origin and destination.
    #[error("no path from {} to {} at interval {}", query.origin, query.destination, query.departure_interval)]
    NoPath { query: RouteQuery },

    /// Bad configuration (training, generation, or CLI).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
