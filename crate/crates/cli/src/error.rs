use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing checkpoint: {0} (run `train` first or pass --checkpoint)")]
    MissingCheckpoint(PathBuf),

    #[error(transparent)]
    Core(#[from] trajsens_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for problems with the configuration or its inputs, 1 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingCheckpoint(_) => 2,
            CliError::Core(trajsens_core::Error::Config(_) | trajsens_core::Error::Parse { .. }) => 2,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
