use std::path::PathBuf;

use thiserror::Error;

/// Harness-level errors. Each variant carries a stable machine-parsable
/// code used in the single-line diagnostic output.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("file {path} has magic {found:?}, expected \"STEM\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("file {path} has format version {found}, expected 1")]
    BadVersion { path: PathBuf, found: u32 },
    #[error("file {path} has dtype code {found}, expected 1 (f32)")]
    BadDtype { path: PathBuf, found: u32 },
    #[error("file {path} truncated: expected {expected} payload bytes, found {actual}")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] stem_core::CoreError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::BadMagic { .. } => "bad-magic",
            CliError::BadVersion { .. } => "bad-version",
            CliError::BadDtype { .. } => "bad-dtype",
            CliError::Truncated { .. } => "truncated",
            CliError::Config(_) => "config",
            CliError::Core(stem_core::CoreError::Shape(_)) => "shape",
            CliError::Core(stem_core::CoreError::Parameter(_)) => "parameter",
            CliError::Core(stem_core::CoreError::Input(_)) => "input",
            CliError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
