//! CSV and JSON file formats.
//!
//! | file               | columns                                   |
//! |--------------------|-------------------------------------------|
//! | `truth.csv`        | `t,x,y,psi,v,beta,delta,omega`            |
//! | `measurements.csv` | `t,sensor,v1,v2`                          |
//! | `estimates_*.csv`  | `t,x,y,theta,v,beta`                      |
//! | `commands.csv`     | `t,delta,omega,r_ref,r_fit`               |
//! | points             | `x,y`                                     |
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the logged values bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use driftlab_core::estimator::{Measurement, NoiseModel, Sensor};
use driftlab_core::metrics::EstimateRow;
use driftlab_core::plant::TruthRow;
use driftlab_core::sim::{CommandRow, RunOutput};
use driftlab_core::Vec2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// One line of a measurement CSV. For the IMU `v1` is the velocity attitude
/// and `v2` the heading; for the cameras they are the ground-frame fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub t: f64,
    pub sensor: Sensor,
    pub v1: f64,
    pub v2: f64,
}

impl From<&Measurement> for MeasurementRecord {
    fn from(m: &Measurement) -> Self {
        MeasurementRecord {
            t: m.t,
            sensor: m.sensor,
            v1: m.value[0],
            v2: m.value[1],
        }
    }
}

impl MeasurementRecord {
    /// Measurement carrying the variance `noise` assigns to its sensor.
    pub fn to_measurement(&self, noise: &NoiseModel) -> Measurement {
        noise.measurement(self.t, self.sensor, [self.v1, self.v2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PointRecord {
    x: f64,
    y: f64,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> AppError + '_ {
    move |source| {
        if source.is_io_error() {
            if let csv::ErrorKind::Io(source) = source.into_kind() {
                return AppError::Io {
                    path: path.to_path_buf(),
                    source,
                };
            }
            unreachable!("is_io_error checked the kind");
        }
        AppError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err(path))
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    read_csv(path)
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    read_csv(path)
}

pub fn read_commands(path: &Path) -> Result<Vec<CommandRow>> {
    read_csv(path)
}

pub fn read_measurements(path: &Path, noise: &NoiseModel) -> Result<Vec<Measurement>> {
    let recs: Vec<MeasurementRecord> = read_csv(path)?;
    Ok(recs.iter().map(|r| r.to_measurement(noise)).collect())
}

pub fn write_measurements(path: &Path, ms: &[Measurement]) -> Result<()> {
    write_csv(path, ms.iter().map(MeasurementRecord::from))
}

pub fn read_points(path: &Path) -> Result<Vec<Vec2>> {
    let recs: Vec<PointRecord> = read_csv(path)?;
    Ok(recs.iter().map(|p| Vec2::new(p.x, p.y)).collect())
}

pub fn write_points(path: &Path, points: &[Vec2]) -> Result<()> {
    write_csv(path, points.iter().map(|p| PointRecord { x: p.x, y: p.y }))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn estimates_file(source: driftlab_core::sim::Source) -> String {
    format!("estimates_{}.csv", source.name())
}

/// Writes every log of a run into `dir` and returns the paths written.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| AppError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = dir.join(name);
        f(&p)?;
        written.push(p);
        Ok(())
    };
    emit("truth.csv", &|p| write_csv(p, out.truth.iter()))?;
    emit("measurements.csv", &|p| write_measurements(p, &out.measurements))?;
    for (source, log) in &out.estimates {
        emit(&estimates_file(*source), &|p| write_csv(p, log.iter()))?;
    }
    emit("commands.csv", &|p| write_csv(p, out.commands.iter()))?;
    emit("report.json", &|p| write_json(p, &out.report))?;
    Ok(written)
}
