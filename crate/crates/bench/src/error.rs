use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(transparent)]
    Core(#[from] dro_core::Error),

    #[error("bad glob pattern: {0}")]
    Pattern(#[from] glob::PatternError),

    #[error("cannot encode manifest entry: {0}")]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors a user fixes by editing the config or the command line.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            BenchError::Parse { .. }
                | BenchError::Config(_)
                | BenchError::Argument(_)
                | BenchError::Pattern(_)
                | BenchError::Core(dro_core::Error::Configuration(_))
                | BenchError::Core(dro_core::Error::Argument(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
