//! TOML experiment configuration.
//!
//! Every key is optional; missing keys take the built-in defaults, so an
//! empty file describes the default experiment.

use std::path::Path;

use driftlab_core::sim::ExperimentConfig;

use crate::error::{AppError, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_VAR: &str = "DRIFTLAB_SEED";

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|source| AppError::Config {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads `path`, or the defaults when `path` is `None`, then applies the
/// `DRIFTLAB_SEED` override.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| AppError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            parse_config(&text, p)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed_override(std::env::var(SEED_VAR).ok())? {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses the value of `DRIFTLAB_SEED`; unset or empty means no override.
pub fn seed_override(value: Option<String>) -> Result<Option<u64>> {
    match value {
        None => Ok(None),
        Some(v) if v.trim().is_empty() => Ok(None),
        Some(v) => v.trim().parse().map(Some).map_err(|_| AppError::Seed(v)),
    }
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    Ok(toml::to_string(cfg)?)
}
