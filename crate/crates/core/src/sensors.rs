//! Simulated onboard sensor suite.
//!
//! - ZED: camera position in its own tracking frame, with a random-walk bias.
//! - D435i: image observation of a fixed anchor (bearing from the horizontal
//!   pixel offset, range from the projected size and from the depth channel).
//! - IMU: velocity attitude and heading, sharing one heading error.
//!
//! Each generator draws from its own ChaCha stream, so runs are reproducible
//! per seed and independent of the order in which streams are consumed.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[allow(unused_imports)] // resolved to inherent methods when std is linked
use num_traits::Float;

use crate::estimator::{Measurement, Sensor};
use crate::frames::{rotate_row, unrotate_row, wrap, GroundPose, MountOffset, PlanarVelocity};
use crate::{Error, Result, Vec2};

/// Known anchor and the camera constants that map it to the image.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AnchorModel {
    pub xa: f64,
    pub ya: f64,
    /// Area-range constant: `d = k1 / √S` (m·px).
    pub k1: f64,
    /// Bearing per pixel of horizontal offset (rad/px).
    pub k2: f64,
    /// Anchor width/height ratio.
    pub k_aspect: f64,
    /// Half of the horizontal field of view (rad).
    pub fov_half: f64,
    /// Offset from the camera to the vehicle centre, body frame.
    pub mount: MountOffset,
    /// Variance of the size-based range (m²), used for fusion.
    pub var_mono: f64,
    /// Variance of the depth-channel range (m²), used for fusion.
    pub var_depth: f64,
}

impl Default for AnchorModel {
    fn default() -> Self {
        AnchorModel {
            xa: 0.0,
            ya: 0.0,
            k1: 60.0,
            k2: 0.0023,
            k_aspect: 1.0,
            fov_half: 43f64.to_radians(),
            mount: MountOffset::new(0.0, -0.12),
            var_mono: 0.02 * 0.02,
            var_depth: 0.015 * 0.015,
        }
    }
}

impl AnchorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.k_aspect > 0.0) {
            return Err(Error::InvalidParameter("anchor constants k1, k2, k must be positive"));
        }
        if !(self.fov_half > 0.0 && self.fov_half < core::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParameter("fov_half must lie in (0, pi/2)"));
        }
        if !(self.var_mono >= 0.0 && self.var_depth >= 0.0) {
            return Err(Error::InvalidParameter("range variances must be non-negative"));
        }
        Ok(())
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.xa, self.ya)
    }
}

/// Anchor as seen in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageObservation {
    /// Horizontal offset of the anchor centroid (px).
    pub x_img: f64,
    /// Projected area (px²).
    pub s_img: f64,
    /// Projected width (px).
    pub w_img: f64,
    /// Range reported by the depth channel (m).
    pub d_depth: f64,
}

/// Standard deviations of the image observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnchorNoise {
    pub x_img_std: f64,
    pub w_img_std: f64,
    pub depth_std: f64,
}

/// Range and bearing of the anchor from the camera, `(d, θ_b)`.
fn anchor_relative(pose: &GroundPose, anchor: &AnchorModel) -> (Vec2, f64, f64) {
    let yaw = pose.yaw();
    let cam = pose.position() - rotate_row(anchor.mount.as_vec(), yaw);
    let p = unrotate_row(anchor.position() - cam, yaw);
    (p, p.norm(), p.x.atan2(p.y))
}

/// Projects the anchor into the image seen from `pose`. `w` holds
/// standard-normal draws for the `x_img`, `w_img` and depth noise. Returns
/// `None` when the anchor is outside the field of view or coincides with the
/// camera.
pub fn anchor_project(
    pose: &GroundPose,
    anchor: &AnchorModel,
    noise: &AnchorNoise,
    w: [f64; 3],
) -> Option<ImageObservation> {
    let (_, d, bearing) = anchor_relative(pose, anchor);
    if !(d > 0.0) || bearing.abs() > anchor.fov_half {
        return None;
    }
    let x_img = bearing / anchor.k2 + noise.x_img_std * w[0];
    let s_clean = (anchor.k1 / d).powi(2);
    let w_img = (s_clean / anchor.k_aspect).sqrt() + noise.w_img_std * w[1];
    if !(w_img > 0.0) {
        return None;
    }
    Some(ImageObservation {
        x_img,
        s_img: anchor.k_aspect * w_img * w_img,
        w_img,
        d_depth: d + noise.depth_std * w[2],
    })
}

/// Inverse-variance weighted mean of two ranges.
pub fn fuse_ranges(d_mono: f64, var_mono: f64, d_depth: f64, var_depth: f64) -> f64 {
    match (var_mono > 0.0, var_depth > 0.0) {
        (true, true) => (d_mono / var_mono + d_depth / var_depth) / (1.0 / var_mono + 1.0 / var_depth),
        (false, true) => d_mono,
        (true, false) => d_depth,
        (false, false) => 0.5 * (d_mono + d_depth),
    }
}

/// Vehicle-centre ground position from an anchor observation and the body
/// yaw of the car (see [`crate::frames::body_yaw`]).
///
/// `p = d (sin θ, cos θ)` points from the camera to the anchor in the body
/// frame, so the camera sits at `anchor − p·T` and the centre at
/// `anchor − p·T + mount·T`.
pub fn anchor_localize(obs: &ImageObservation, anchor: &AnchorModel, yaw: f64) -> Result<Vec2> {
    if !(obs.w_img > 0.0) {
        return Err(Error::Domain("anchor width must be positive"));
    }
    let k1p = anchor.k1 / anchor.k_aspect.sqrt();
    let d_mono = k1p / obs.w_img;
    let d = fuse_ranges(d_mono, anchor.var_mono, obs.d_depth, anchor.var_depth);
    let theta = anchor.k2 * obs.x_img;
    let p = Vec2::new(d * theta.sin(), d * theta.cos());
    Ok(anchor.position() - rotate_row(p, yaw) + rotate_row(anchor.mount.as_vec(), yaw))
}

/// Noise settings of the ZED and IMU streams.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SensorNoise {
    /// White noise on each ZED position axis (m).
    pub zed_std: f64,
    /// Random-walk step of the ZED bias per tick, each axis (m).
    pub zed_bias_step: f64,
    /// Offset from the ZED to the vehicle centre, body frame.
    pub zed_mount: MountOffset,
    pub anchor: AnchorNoise,
    /// IMU heading error (rad).
    pub imu_heading_std: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise {
            zed_std: 0.01,
            zed_bias_step: 0.002,
            zed_mount: MountOffset::new(0.0, -0.1),
            anchor: AnchorNoise {
                x_img_std: 3.0,
                w_img_std: 0.6,
                depth_std: 0.015,
            },
            imu_heading_std: 0.01,
        }
    }
}

/// Rates and timing noise of the measurement streams.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SensorSchedule {
    pub zed_rate: f64,
    pub d435i_rate: f64,
    /// IMU rate (Hz); 0 disables the stream.
    pub imu_rate: f64,
    /// Standard deviation of the timestamp jitter (s).
    pub jitter_std: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
}

impl Default for SensorSchedule {
    fn default() -> Self {
        SensorSchedule {
            zed_rate: 100.0,
            d435i_rate: 60.0,
            imu_rate: 100.0,
            jitter_std: 5e-4,
            seed: 0,
        }
    }
}

impl SensorSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.zed_rate > 0.0 && self.d435i_rate > 0.0 && self.imu_rate >= 0.0) {
            return Err(Error::InvalidParameter("sensor rates must be positive"));
        }
        if !(self.jitter_std >= 0.0) {
            return Err(Error::InvalidParameter("jitter must be non-negative"));
        }
        Ok(())
    }
}

/// Smallest spacing enforced between merged timestamps (s).
pub const MIN_GAP: f64 = 1e-9;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Merged, strictly increasing `(t, sensor)` list over `(0, t_end)`.
///
/// Stream `k`-th ticks sit at `(k + phase)/rate` plus clamped Gaussian
/// jitter; the IMU is offset by half a period. Ticks that end up within
/// [`MIN_GAP`] of their predecessor are pushed forward to keep every
/// timestamp distinct.
pub fn build_schedule(sched: &SensorSchedule, t_end: f64) -> Result<Vec<(f64, Sensor)>> {
    sched.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter("t_end must be positive"));
    }
    let mut out = Vec::new();
    let streams = [
        (Sensor::Zed, sched.zed_rate, 0.0, 1),
        (Sensor::D435i, sched.d435i_rate, 0.0, 2),
        (Sensor::Imu, sched.imu_rate, 0.5, 3),
    ];
    for (sensor, rate, phase, id) in streams {
        if rate == 0.0 {
            continue;
        }
        let mut rng = stream(sched.seed, 0x5c00 + id);
        let period = 1.0 / rate;
        let bound = 0.4 * period;
        let mut k = 0u64;
        loop {
            let nominal = (k as f64 + phase) * period;
            k += 1;
            if nominal >= t_end {
                break;
            }
            let jitter = if sched.jitter_std > 0.0 {
                (sched.jitter_std * normal(&mut rng)).clamp(-bound, bound)
            } else {
                0.0
            };
            let t = nominal + jitter;
            if t > 0.0 && t < t_end {
                out.push((t, sensor));
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for i in 1..out.len() {
        if out[i].0 < out[i - 1].0 + MIN_GAP {
            out[i].0 = out[i - 1].0 + MIN_GAP;
        }
    }
    Ok(out)
}

/// Stateful generator for all three sensors.
#[derive(Debug, Clone)]
pub struct SensorSuite {
    pub noise: SensorNoise,
    pub anchor: AnchorModel,
    /// Body yaw of the ZED when its tracking frame was initialised.
    pub zed_yaw0: f64,
    zed_bias: Vec2,
    zed_rng: ChaCha8Rng,
    bias_rng: ChaCha8Rng,
    anchor_rng: ChaCha8Rng,
    imu_rng: ChaCha8Rng,
    heading_rng: ChaCha8Rng,
}

impl SensorSuite {
    pub fn new(noise: SensorNoise, anchor: AnchorModel, zed_yaw0: f64, seed: u64) -> Result<Self> {
        anchor.validate()?;
        if !(noise.zed_std >= 0.0 && noise.zed_bias_step >= 0.0 && noise.imu_heading_std >= 0.0) {
            return Err(Error::InvalidParameter("sensor noise must be non-negative"));
        }
        Ok(SensorSuite {
            noise,
            anchor,
            zed_yaw0,
            zed_bias: Vec2::zeros(),
            zed_rng: stream(seed, 0x2e00),
            bias_rng: stream(seed, 0x2e01),
            anchor_rng: stream(seed, 0xa400),
            imu_rng: stream(seed, 0x1400),
            heading_rng: stream(seed, 0x1401),
        })
    }

    pub fn zed_bias(&self) -> Vec2 {
        self.zed_bias
    }

    /// ZED reading at one tick: the camera position plus bias and noise,
    /// expressed in the ZED tracking frame.
    pub fn zed_measure(&mut self, t: f64, pose: &GroundPose) -> Measurement {
        let step = self.noise.zed_bias_step;
        if step > 0.0 {
            let db = Vec2::new(normal(&mut self.bias_rng), normal(&mut self.bias_rng));
            self.zed_bias += db * step;
        }
        let mut white = Vec2::zeros();
        if self.noise.zed_std > 0.0 {
            white = Vec2::new(normal(&mut self.zed_rng), normal(&mut self.zed_rng)) * self.noise.zed_std;
        }
        let cam = pose.position() - rotate_row(self.noise.zed_mount.as_vec(), pose.yaw());
        let p = unrotate_row(cam + self.zed_bias + white, self.zed_yaw0);
        let var = self.noise.zed_std * self.noise.zed_std;
        Measurement {
            t,
            sensor: Sensor::Zed,
            value: [p.x, p.y],
            noise_var: [var, var],
        }
    }

    /// Anchor observation at one D435i tick, `None` when not visible.
    pub fn anchor_observe(&mut self, pose: &GroundPose) -> Option<ImageObservation> {
        let w = [
            normal(&mut self.anchor_rng),
            normal(&mut self.anchor_rng),
            normal(&mut self.anchor_rng),
        ];
        anchor_project(pose, &self.anchor, &self.noise.anchor, w)
    }

    /// IMU reading: `[θ + ε, ψ + ε]` with a shared heading error `ε`;
    /// `None` for a stationary car.
    pub fn imu_measure(&mut self, t: f64, pose: &GroundPose, vel: &PlanarVelocity) -> Option<Measurement> {
        let theta = vel.attitude()?;
        let eps = if self.noise.imu_heading_std > 0.0 {
            self.noise.imu_heading_std * normal(&mut self.imu_rng)
        } else {
            0.0
        };
        let var = self.noise.imu_heading_std * self.noise.imu_heading_std;
        Some(Measurement {
            t,
            sensor: Sensor::Imu,
            value: [wrap(theta + eps), wrap(pose.psi + eps)],
            noise_var: [var, var],
        })
    }

    /// Heading used to rotate a camera fix into the ground frame: `ψ` with
    /// the IMU heading error, drawn from its own stream.
    pub fn heading_reading(&mut self, pose: &GroundPose) -> f64 {
        let eps = if self.noise.imu_heading_std > 0.0 {
            self.noise.imu_heading_std * normal(&mut self.heading_rng)
        } else {
            0.0
        };
        wrap(pose.psi + eps)
    }
}
