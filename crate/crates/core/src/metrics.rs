//! Error statistics of closed-loop runs.
//!
//! Two families are reported and kept apart:
//!
//! - tracking: how far the true car is from the commanded circle and
//!   sideslip, `|‖p − c‖ − r0|` and `|β − β_ref|`;
//! - estimation: how far an estimate is from the truth at the same instant,
//!   `|‖p̂ − c‖ − ‖p − c‖|` and `|β̂ − β|`.

use alloc::vec::Vec;

#[allow(unused_imports)] // resolved to inherent methods when std is linked
use num_traits::Float;

use crate::controller::CircleTask;
use crate::frames::wrap;
use crate::plant::TruthRow;
use crate::{Error, Result, Vec2};

/// Largest time offset accepted when pairing estimate and truth rows (s).
pub const ALIGN_WINDOW: f64 = 0.01;

/// One row of an estimate log.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimateRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub beta: f64,
}

/// Five-number summary plus mean.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn from_samples(samples: &[f64]) -> Result<BoxStats> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("no samples for statistics"));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(s.len() - 1);
            s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
        };
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        Ok(BoxStats {
            min: s[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: s[s.len() - 1],
            mean: mean.clamp(s[0], s[s.len() - 1]),
            count: s.len(),
        })
    }
}

/// Radius and sideslip error statistics of one family.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorStats {
    pub radius: BoxStats,
    pub sideslip: BoxStats,
}

/// Closed time interval used to select rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub from: f64,
    pub to: f64,
}

impl TimeWindow {
    pub const ALL: TimeWindow = TimeWindow {
        from: f64::NEG_INFINITY,
        to: f64::INFINITY,
    };

    pub fn contains(&self, t: f64) -> bool {
        t >= self.from && t <= self.to
    }
}

fn radius(x: f64, y: f64, c: Vec2) -> f64 {
    (x - c.x).hypot(y - c.y)
}

/// Tracking errors of the true trajectory against the task.
pub fn tracking_errors(truth: &[TruthRow], task: &CircleTask, window: TimeWindow) -> Result<ErrorStats> {
    let c = task.center();
    let rows = truth.iter().filter(|r| window.contains(r.t));
    let (r_err, b_err): (Vec<f64>, Vec<f64>) = rows
        .map(|r| ((radius(r.x, r.y, c) - task.r0).abs(), wrap(r.beta - task.beta_ref).abs()))
        .unzip();
    if r_err.is_empty() {
        return Err(Error::InvalidParameter("no truth rows in the metrics window"));
    }
    Ok(ErrorStats {
        radius: BoxStats::from_samples(&r_err)?,
        sideslip: BoxStats::from_samples(&b_err)?,
    })
}

/// Index of the truth row nearest to `t`, if within [`ALIGN_WINDOW`].
/// `truth` must be sorted by time.
pub fn nearest(truth: &[TruthRow], t: f64) -> Option<usize> {
    let i = truth.partition_point(|r| r.t < t);
    let mut best: Option<usize> = None;
    for j in [i.wrapping_sub(1), i] {
        if j < truth.len() && (truth[j].t - t).abs() <= ALIGN_WINDOW {
            match best {
                Some(b) if (truth[b].t - t).abs() <= (truth[j].t - t).abs() => {}
                _ => best = Some(j),
            }
        }
    }
    best
}

/// Estimation errors of `est` against `truth`, pairing each estimate row
/// with its nearest truth row.
pub fn estimation_errors(
    truth: &[TruthRow],
    est: &[EstimateRow],
    task: &CircleTask,
    window: TimeWindow,
) -> Result<ErrorStats> {
    let c = task.center();
    let mut r_err = Vec::new();
    let mut b_err = Vec::new();
    for e in est.iter().filter(|e| window.contains(e.t)) {
        if let Some(i) = nearest(truth, e.t) {
            let tr = &truth[i];
            r_err.push((radius(e.x, e.y, c) - radius(tr.x, tr.y, c)).abs());
            b_err.push(wrap(e.beta - tr.beta).abs());
        }
    }
    if r_err.is_empty() {
        return Err(Error::InvalidParameter("estimate and truth logs do not overlap"));
    }
    Ok(ErrorStats {
        radius: BoxStats::from_samples(&r_err)?,
        sideslip: BoxStats::from_samples(&b_err)?,
    })
}

/// Laps completed: unwrapped heading winding over `2π`.
pub fn lap_count(truth: &[TruthRow], window: TimeWindow) -> f64 {
    let mut rows = truth.iter().filter(|r| window.contains(r.t));
    let Some(first) = rows.next() else {
        return 0.0;
    };
    let mut prev = first.psi;
    let mut wound = 0.0;
    for r in rows {
        wound += wrap(r.psi - prev);
        prev = r.psi;
    }
    wound.abs() / core::f64::consts::TAU
}

/// Tracking statistics, laps and lap period of a truth log, plus the
/// estimation statistics of an estimate log when one is given.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub tracking: ErrorStats,
    pub estimation: Option<ErrorStats>,
    pub laps: f64,
    pub lap_period: f64,
}

pub fn compute_metrics(
    truth: &[TruthRow],
    est: Option<&[EstimateRow]>,
    task: &CircleTask,
    window: TimeWindow,
) -> Result<MetricsReport> {
    let tracking = tracking_errors(truth, task, window)?;
    let estimation = est.map(|e| estimation_errors(truth, e, task, window)).transpose()?;
    let laps = lap_count(truth, window);
    let span = {
        let mut ts = truth.iter().filter(|r| window.contains(r.t)).map(|r| r.t);
        let first = ts.next().unwrap_or(0.0);
        ts.next_back().unwrap_or(first) - first
    };
    let lap_period = if laps > 0.0 { span / laps } else { f64::INFINITY };
    Ok(MetricsReport {
        tracking,
        estimation,
        laps,
        lap_period,
    })
}
