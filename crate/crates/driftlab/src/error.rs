use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] driftlab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid DRIFTLAB_SEED {0:?}: expected an unsigned integer")]
    Seed(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
}

impl AppError {
    /// Short machine-readable category, reported as `kind` in the error JSON.
    pub fn kind(&self) -> &'static str {
        use driftlab_core::Error as E;
        match self {
            AppError::Core(E::Domain(_)) => "domain",
            AppError::Core(E::Fit(_)) => "fit",
            AppError::Core(E::InvalidParameter(_)) => "invalid_parameter",
            AppError::Core(E::OutOfOrder(_)) => "out_of_order",
            AppError::Core(E::Numerical(_)) => "numerical",
            AppError::Core(E::Diverged { .. }) => "diverged",
            AppError::Io { .. } => "io",
            AppError::Csv { .. } => "csv",
            AppError::Config { .. } => "config",
            AppError::Seed(_) => "config",
            AppError::Usage(_) => "usage",
            AppError::Json(_) | AppError::TomlWrite(_) => "serialization",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
        })
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
