use std::path::{Path, PathBuf};

/// Failures of the driver. Each maps onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    /// Bad flags, config values, or input files.
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] ocdfl_core::Error),
    /// A check the command exists to perform came out negative.
    #[error("{0}")]
    CheckFailed(String),
}

impl SimError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for validation problems, 2 for everything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Validation(_) => 1,
            _ => 2,
        }
    }
}
