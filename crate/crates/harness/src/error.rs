use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] htx_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the error stems from invalid user input rather than a failed run.
    pub fn is_config(&self) -> bool {
        use htx_core::Error as E;
        match self {
            HarnessError::Config(_) => true,
            HarnessError::Core(e) => matches!(
                e,
                E::Config(_) | E::Range { .. } | E::Dimension { .. } | E::Invariant(_) | E::Format(_)
            ),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
