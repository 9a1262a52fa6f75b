use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use driftlab::app::{self, FitMethod};
use driftlab::{AppError, Result};
use driftlab_core::sim::Source;

/// Closed-loop drift simulation, replay and analysis.
#[derive(Debug, Parser)]
#[command(name = "driftlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its logs and report.
    Simulate {
        /// TOML experiment configuration.
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one filter over a measurement CSV and emit its estimates.
    Replay {
        measurements: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Command log supplying the inputs in effect at each report.
        #[arg(long)]
        commands: Option<PathBuf>,
        /// Filter to run: ekf, zed or d435i.
        #[arg(long, default_value = "ekf", value_parser = parse_source)]
        source: Source,
        /// Estimate CSV to write; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a circle to a CSV of x,y points and print the result as JSON.
    FitCircle {
        points: PathBuf,
        /// ℓ1 weight of the robust fit; data-driven when absent.
        #[arg(long, conflicts_with = "kasa")]
        lambda: Option<f64>,
        /// Robust fit with outlier offsets (default).
        #[arg(long, conflicts_with = "kasa")]
        robust: bool,
        /// Plain algebraic fit.
        #[arg(long)]
        kasa: bool,
    },
    /// Print error statistics of a truth log and, optionally, an estimate log.
    Metrics {
        truth: PathBuf,
        estimates: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the built-in defaults or a resolved configuration as TOML.
    Config {
        #[arg(long, conflicts_with = "file")]
        defaults: bool,
        file: Option<PathBuf>,
    },
}

fn parse_source(s: &str) -> std::result::Result<Source, String> {
    Source::from_name(s).map_err(|e| e.to_string())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|source| AppError::Io {
        path: "<stdout>".into(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let (_, summary) = app::simulate(&config, &out)?;
            print_json(&summary)
        }
        Command::Replay {
            measurements,
            config,
            commands,
            source,
            out,
        } => {
            let rows = app::replay_file(&measurements, config.as_deref(), commands.as_deref(), source)?;
            match out {
                Some(p) => driftlab::io::write_csv(&p, rows.iter()),
                None => app::write_estimates(std::io::stdout().lock(), &rows),
            }
        }
        Command::FitCircle { points, lambda, kasa, .. } => {
            let method = if kasa { FitMethod::Kasa } else { FitMethod::Robust };
            print_json(&app::fit_circle(&points, lambda, method)?)
        }
        Command::Metrics {
            truth,
            estimates,
            config,
        } => print_json(&app::metrics(&truth, estimates.as_deref(), config.as_deref())?),
        Command::Config { defaults, file } => {
            let text = app::config_text(defaults, file.as_deref())?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = AppError::Usage(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
