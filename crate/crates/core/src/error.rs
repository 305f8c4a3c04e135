use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PrismError> = std::result::Result<T, E>;

/// Failure classes shared by every stage of the pipeline.
///
/// Each variant maps onto one of the stable process exit codes used by the
/// command-line driver, see [`PrismError::exit_code`].
#[derive(Debug, Error)]
pub enum PrismError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PrismError {
    pub fn dim(msg: impl Into<String>) -> Self {
        Self::Dimension(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Self::Numeric(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Io {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric, 5 I/O.
    ///
    /// Dimension mismatches are reported as data errors since they always
    /// stem from inputs that disagree with each other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) | Self::Dimension(_) => 3,
            Self::Numeric(_) => 4,
            Self::Io { .. } => 5,
        }
    }

    /// Prefix the message with a stage or item label, keeping the variant.
    pub fn context(self, label: impl std::fmt::Display) -> Self {
        match self {
            Self::Dimension(m) => Self::Dimension(format!("{label}: {m}")),
            Self::Numeric(m) => Self::Numeric(format!("{label}: {m}")),
            Self::Data(m) => Self::Data(format!("{label}: {m}")),
            Self::Config(m) => Self::Config(format!("{label}: {m}")),
            Self::Io { path, message } => Self::Io {
                path,
                message: format!("{label}: {message}"),
            },
        }
    }
}
