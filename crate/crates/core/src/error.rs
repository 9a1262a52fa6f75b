use thiserror::Error;

/// Errors raised by the estimation, fitting and control routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input lies outside the domain where the quantity is defined
    /// (non-finite angle, zero velocity bearing, non-positive radius, ...).
    #[error("domain error: {0}")]
    Domain(&'static str),
    /// The circle fit is ill-posed: too few points, (near-)collinear points
    /// or a non-positive squared radius.
    #[error("circle fit failed: {0}")]
    Fit(&'static str),
    /// A parameter violates its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    /// Time ran backwards: a prediction with negative interval or a
    /// measurement older than the current estimate.
    #[error("out-of-order time: {0}")]
    OutOfOrder(&'static str),
    /// Innovation covariance was not positive semidefinite.
    #[error("numerical error: {0}")]
    Numerical(&'static str),
    /// The estimate drifted too far from ground truth during a closed-loop run.
    #[error("estimator diverged at t = {t:.3} s (position error {error:.3} m)")]
    Diverged { t: f64, error: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
