use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Exit status for configuration, usage and checkpoint-compatibility errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for unreadable or malformed data.
pub const EXIT_DATA: i32 = 3;
/// Exit status when training produced a non-finite loss.
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },
    #[error("{}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] harakat_core::Error),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use harakat_core::Error as E;
        match self {
            AppError::Config(_) | AppError::Checkpoint { .. } => EXIT_CONFIG,
            AppError::Io { .. } | AppError::Manifest { .. } | AppError::Data { .. } => EXIT_DATA,
            AppError::Core(e) => match e {
                E::Divergence(..) => EXIT_DIVERGENCE,
                E::Config(_)
                | E::Checkpoint(_)
                | E::Shape { .. }
                | E::PoolFactor { .. }
                | E::OddDimension(_)
                | E::TokenOutOfRange { .. } => EXIT_CONFIG,
                _ => EXIT_DATA,
            },
        }
    }
}
