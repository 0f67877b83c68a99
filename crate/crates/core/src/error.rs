use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed XML at line {line}: {message}")]
    Xml { line: u64, message: String },

    #[error("ways reference missing nodes: {way_ids:?}")]
    DanglingReference { way_ids: Vec<i64> },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("network error for {url}: {message}")]
    Network { url: String, message: String },

    #[error("decode error{}: {message}", index.map(|i| format!(" in item {i}")).unwrap_or_default())]
    Decode {
        index: Option<usize>,
        message: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("classifier backend error{}: {message}", patch_id.as_ref().map(|p| format!(" (patch {p})")).unwrap_or_default())]
    Backend {
        patch_id: Option<String>,
        message: String,
    },

    #[error("scene spec error: {0}")]
    Scene(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn decode(index: Option<usize>, msg: impl std::fmt::Display) -> Self {
        Error::Decode {
            index,
            message: msg.to_string(),
        }
    }

    /// Process exit status for the CLI: 2 input/validation, 3 network,
    /// 4 classifier backend. Usage errors (1) are raised before any stage runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Network { .. } => 3,
            Error::Backend { .. } => 4,
            _ => 2,
        }
    }
}
