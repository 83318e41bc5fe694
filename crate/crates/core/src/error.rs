use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration file or value could not be accepted.
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    /// A runtime consistency check failed; outputs of the run are invalid.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A bundled or user-supplied data table is malformed.
    #[error("data file {name}: {reason}")]
    DataFile { name: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// One run of an experiment matrix failed.
    #[error("{cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    /// An argument passed to a library function violates its precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for configuration problems, 2 for
    /// everything detected after a run started.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::DataFile { .. } | Error::InvalidArgument(_) => 1,
            Error::Invariant(_) | Error::Io { .. } => 2,
            Error::Cell { source, .. } => source.exit_code(),
        }
    }
}

/// Configuration parse and validation failures. Every variant names the
/// offending key when there is one.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("duplicate key `{0}`")]
    DuplicateKey(String),

    #[error("key `{key}`: cannot parse `{value}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },

    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },

    #[error("cannot read {path}: {reason}")]
    Unreadable { path: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
