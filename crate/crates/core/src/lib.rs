//! Estimation, circle fitting and control primitives for closed-loop circular
//! drifting of a small-scale racecar.
//!
//! The crate is `no_std` (it needs `alloc`) so the same code can run on an
//! onboard computer or inside the desk-top simulator shipped in the `driftlab`
//! companion crate. Modules, bottom-up:
//!
//! - [`frames`]: angle wrapping, planar rotations, sensor-frame corrections.
//! - [`circlefit`]: algebraic (KASA) and ℓ1-resilient circle fitting.
//! - [`estimator`]: asynchronous EKF over `(x, y, θ, v)` and the slip-angle gate.
//! - [`controller`]: sideslip / circle PID loops and the reference-radius law.
//! - [`sensors`]: simulated ZED, D435i (visual anchor) and IMU streams.
//! - [`plant`]: lagged kinematic drift plant used as ground truth.
//! - [`sim`] and [`metrics`]: closed-loop runner and error statistics.

#![no_std]
#![deny(unsafe_code)]
// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod circlefit;
pub mod controller;
pub mod estimator;
pub mod frames;
pub mod metrics;
pub mod plant;
pub mod sensors;
pub mod sim;

mod error;

pub use error::{Error, Result};

/// Planar vector type used for positions and velocities throughout the crate.
pub type Vec2 = nalgebra::Vector2<f64>;
