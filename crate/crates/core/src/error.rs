use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// Variants are grouped into three families (configuration, data, compute)
/// which the command-line front end maps onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported format_version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: String,
        expected: u32,
    },

    #[error("{path}: malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("{path}: inconsistent shape metadata: {reason}")]
    ShapeInconsistency { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Csv { path: PathBuf, line: u64, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for configuration errors, 3 for data errors,
    /// 4 for compute errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::VersionMismatch { .. }
            | Error::Malformed { .. }
            | Error::ShapeInconsistency { .. }
            | Error::Csv { .. } => 3,
            Error::DimensionMismatch { .. } | Error::Empty(_) | Error::InvalidArgument(_) | Error::NonFinite(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
