use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure category, used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("invalid label {label} for {loss} loss (expected -1 or +1)")]
    InvalidLabel { label: f64, loss: &'static str },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error("document schema violation: {0}")]
    Schema(String),
    #[error("unsupported document version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("optimization diverged with learning rate eta={eta}: {detail}")]
    Divergence { eta: f64, detail: String },
    #[error("{0}")]
    Numerical(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter { .. } | Error::Config(_) => ErrorClass::Config,
            Error::Divergence { .. } | Error::Numerical(_) => ErrorClass::Numerical,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Data(_)
            | Error::DegenerateLabels(_)
            | Error::InvalidLabel { .. }
            | Error::DimensionMismatch(_)
            | Error::MalformedTree(_)
            | Error::Schema(_)
            | Error::VersionMismatch { .. } => ErrorClass::Data,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
