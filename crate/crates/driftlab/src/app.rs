//! Subcommand implementations, independent of argument parsing.

use std::io::Write;
use std::path::{Path, PathBuf};

use driftlab_core::circlefit::{kasa_fit, CircleFit, FitSettings};
use driftlab_core::metrics::{compute_metrics, EstimateRow, MetricsReport};
use driftlab_core::sim::{replay, run_closed_loop, RunOutput, Source};
use serde::Serialize;

use crate::config::{load_config, to_toml};
use crate::error::{AppError, Result};
use crate::io;

/// Summary printed by `simulate`.
#[derive(Debug, Serialize)]
pub struct SimulateSummary {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub report: driftlab_core::sim::ExperimentReport,
}

/// Runs the configured experiment and writes its logs, the resolved
/// configuration and the report into `out_dir`.
pub fn simulate(config: &Path, out_dir: &Path) -> Result<(RunOutput, SimulateSummary)> {
    let cfg = load_config(Some(config))?;
    let out = run_closed_loop(&cfg)?;
    let mut files = io::write_run(out_dir, &out)?;
    let resolved = out_dir.join("config.toml");
    io::write_text(&resolved, &to_toml(&cfg)?)?;
    files.push(resolved);
    let summary = SimulateSummary {
        out_dir: out_dir.to_path_buf(),
        files,
        report: out.report.clone(),
    };
    Ok((out, summary))
}

/// Re-runs one filter over a measurement CSV.
pub fn replay_file(
    measurements: &Path,
    config: Option<&Path>,
    commands: Option<&Path>,
    source: Source,
) -> Result<Vec<EstimateRow>> {
    let cfg = load_config(config)?;
    let ms = io::read_measurements(measurements, &cfg.ekf.noise)?;
    let cmds = match commands {
        Some(p) => io::read_commands(p)?,
        None => Vec::new(),
    };
    Ok(replay(&cfg, source, &ms, &cmds)?)
}

pub fn write_estimates<W: Write>(w: W, rows: &[EstimateRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|source| AppError::Csv {
            path: PathBuf::from("<stdout>"),
            source,
        })?;
    }
    out.flush().map_err(|source| AppError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Robust,
    Kasa,
}

#[derive(Debug, Serialize)]
pub struct FitOutput {
    pub method: FitMethod,
    pub points: usize,
    #[serde(flatten)]
    pub fit: CircleFit,
}

pub fn fit_circle(points: &Path, lambda: Option<f64>, method: FitMethod) -> Result<FitOutput> {
    let pts = io::read_points(points)?;
    let fit = match method {
        FitMethod::Kasa => kasa_fit(&pts)?,
        FitMethod::Robust => FitSettings {
            lambda,
            ..Default::default()
        }
        .fit(&pts)?,
    };
    Ok(FitOutput {
        method,
        points: pts.len(),
        fit,
    })
}

/// Metrics of a truth log, and of an estimate log against it, over the
/// configured window.
pub fn metrics(truth: &Path, estimates: Option<&Path>, config: Option<&Path>) -> Result<MetricsReport> {
    let cfg = load_config(config)?;
    let truth = io::read_truth(truth)?;
    let est = match estimates {
        Some(p) => Some(io::read_estimates(p)?),
        None => None,
    };
    Ok(compute_metrics(&truth, est.as_deref(), &cfg.task, cfg.metrics_window())?)
}

pub fn config_text(defaults: bool, file: Option<&Path>) -> Result<String> {
    match (defaults, file) {
        (true, None) => to_toml(&driftlab_core::sim::ExperimentConfig::default()),
        (false, Some(p)) => to_toml(&load_config(Some(p))?),
        _ => Err(AppError::Usage("config takes either --defaults or a config file".into())),
    }
}
