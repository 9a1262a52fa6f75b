//! Experiment harness around `driftlab-core`: TOML configuration, CSV/JSON
//! logs and the `driftlab` command-line tool.

pub mod app;
pub mod config;
mod error;
pub mod io;

pub use error::{AppError, Result};
