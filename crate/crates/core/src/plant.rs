//! Lagged kinematic drift plant used as ground truth.
//!
//! The car moves along its velocity attitude `θ = ψ + β` at speed `v`. While
//! drifting the tyres are saturated, so the lateral acceleration is pinned at
//! `a_lat` and the path curvature is `a_lat / v²`. Steering sets the sideslip
//! and wheel speed sets the speed, both through first-order lags:
//!
//! ```text
//! β → g_δ·δ  (τ_β)        v → g_ω·ω  (τ_v)
//! ```
//!
//! Lags are discretised exactly for a command held over the step; the
//! kinematics use explicit Euler.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[allow(unused_imports)] // resolved to inherent methods when std is linked
use num_traits::Float;

use crate::controller::ControlCommand;
use crate::frames::{wrap, GroundPose, PlanarVelocity};
use crate::{Error, Result, Vec2};

/// Ground-truth vehicle state.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantState {
    pub x: f64,
    pub y: f64,
    /// Heading, wrapped.
    pub psi: f64,
    /// Speed, non-negative.
    pub v: f64,
    /// Sideslip, wrapped.
    pub beta: f64,
    pub t: f64,
}

impl PlantState {
    /// State on an anticlockwise circle about `center` at bearing `bearing`,
    /// drifting with sideslip `beta` at speed `v`.
    pub fn on_circle(center: Vec2, r: f64, bearing: f64, v: f64, beta: f64) -> Self {
        let theta = bearing + core::f64::consts::FRAC_PI_2;
        PlantState {
            x: center.x + r * bearing.cos(),
            y: center.y + r * bearing.sin(),
            psi: wrap(theta - beta),
            v,
            beta: wrap(beta),
            t: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Velocity attitude `ψ + β`.
    pub fn theta(&self) -> f64 {
        wrap(self.psi + self.beta)
    }

    pub fn velocity(&self) -> PlanarVelocity {
        PlanarVelocity::from_polar(self.v, self.theta())
    }

    pub fn pose(&self) -> GroundPose {
        GroundPose::new(self.x, self.y, self.psi)
    }
}

/// Actuator response and drift constants of the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PlantConfig {
    /// Sideslip time constant (s); `inf` freezes the sideslip.
    pub tau_beta: f64,
    /// Speed time constant (s); `inf` freezes the speed.
    pub tau_v: f64,
    /// Steady-state sideslip per unit steering (rad/rad).
    pub g_delta: f64,
    /// Steady-state speed per unit wheel speed ((m/s)/(rad/s)).
    pub g_omega: f64,
    /// Lateral acceleration sustained while drifting (m/s²); 0 drives straight.
    pub lateral_accel: f64,
    /// Smallest turning radius (m), bounds the curvature at low speed.
    pub min_radius: f64,
    /// White-noise intensity on the sideslip rate (rad/√s).
    pub beta_noise: f64,
    /// White-noise intensity on the speed rate ((m/s)/√s).
    pub v_noise: f64,
    /// Integration step (s).
    pub dt: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            tau_beta: 0.2,
            tau_v: 0.3,
            g_delta: 3.5,
            g_omega: 0.05,
            lateral_accel: 2.4,
            min_radius: 0.1,
            beta_noise: 0.02,
            v_noise: 0.05,
            dt: 1e-3,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_beta > 0.0 && self.tau_v > 0.0) {
            return Err(Error::InvalidParameter("plant lags must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter("plant step must be positive"));
        }
        if !(self.lateral_accel >= 0.0 && self.min_radius > 0.0) {
            return Err(Error::InvalidParameter("lateral_accel must be >= 0 and min_radius > 0"));
        }
        if !(self.beta_noise >= 0.0 && self.v_noise >= 0.0) {
            return Err(Error::InvalidParameter("plant noise intensities must be non-negative"));
        }
        Ok(())
    }

    /// Path curvature at speed `v`.
    pub fn curvature(&self, v: f64) -> f64 {
        if self.lateral_accel == 0.0 {
            return 0.0;
        }
        let r = (v * v / self.lateral_accel).max(self.min_radius);
        1.0 / r
    }

    /// Radius of the steady circle driven at speed `v`.
    pub fn steady_radius(&self, v: f64) -> f64 {
        1.0 / self.curvature(v)
    }

    /// Speed whose steady circle has radius `r`.
    pub fn steady_speed(&self, r: f64) -> f64 {
        (self.lateral_accel * r).sqrt()
    }
}

/// One step of length `h` under a held command. `w` are standard-normal
/// draws for the sideslip and speed noise.
pub fn plant_step(s: &PlantState, cmd: &ControlCommand, cfg: &PlantConfig, h: f64, w: [f64; 2]) -> PlantState {
    let theta = s.psi + s.beta;
    let (sin, cos) = theta.sin_cos();
    let x = s.x + s.v * cos * h;
    let y = s.y + s.v * sin * h;
    let theta_next = theta + s.v * cfg.curvature(s.v) * h;

    let sqrt_h = h.sqrt();
    let a_beta = (-h / cfg.tau_beta).exp();
    let a_v = (-h / cfg.tau_v).exp();
    let beta_ss = cfg.g_delta * cmd.delta;
    let v_ss = cfg.g_omega * cmd.omega;
    let beta = beta_ss + (s.beta - beta_ss) * a_beta + cfg.beta_noise * sqrt_h * w[0];
    let v = (v_ss + (s.v - v_ss) * a_v + cfg.v_noise * sqrt_h * w[1]).max(0.0);

    PlantState {
        x,
        y,
        psi: wrap(theta_next - beta),
        v,
        beta: wrap(beta),
        t: s.t + h,
    }
}

/// Plant with its own noise stream.
#[derive(Debug, Clone)]
pub struct Plant {
    pub cfg: PlantConfig,
    state: PlantState,
    rng: ChaCha8Rng,
}

/// Stream id of the plant noise generator.
pub const PLANT_STREAM: u64 = 0x504c;

impl Plant {
    pub fn new(init: PlantState, cfg: PlantConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PLANT_STREAM);
        Ok(Plant { cfg, state: init, rng })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    fn draw(&mut self) -> [f64; 2] {
        if self.cfg.beta_noise == 0.0 && self.cfg.v_noise == 0.0 {
            return [0.0; 2];
        }
        [StandardNormal.sample(&mut self.rng), StandardNormal.sample(&mut self.rng)]
    }

    /// Advances by `h ≤ dt` under `cmd`.
    pub fn step(&mut self, cmd: &ControlCommand, h: f64) -> &PlantState {
        let w = self.draw();
        self.state = plant_step(&self.state, cmd, &self.cfg, h, w);
        &self.state
    }

    /// Integrates to time `t` in steps of at most `dt`.
    pub fn advance_to(&mut self, t: f64, cmd: &ControlCommand) -> &PlantState {
        while self.state.t < t {
            let h = (t - self.state.t).min(self.cfg.dt);
            if h <= 1e-15 {
                self.state.t = t;
                break;
            }
            self.step(cmd, h);
        }
        &self.state
    }
}

/// One row of the ground-truth trajectory log.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruthRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub beta: f64,
    pub delta: f64,
    pub omega: f64,
}

impl TruthRow {
    pub fn new(s: &PlantState, cmd: &ControlCommand) -> Self {
        TruthRow {
            t: s.t,
            x: s.x,
            y: s.y,
            psi: s.psi,
            v: s.v,
            beta: s.beta,
            delta: cmd.delta,
            omega: cmd.omega,
        }
    }
}

/// Fixed-step run of `duration` seconds with `control` called every
/// `control_period` seconds on the true state. Logs every control tick.
pub fn run_plant(
    init: PlantState,
    cfg: PlantConfig,
    seed: u64,
    duration: f64,
    control_period: f64,
    mut control: impl FnMut(&PlantState) -> ControlCommand,
) -> Result<Vec<TruthRow>> {
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter("duration must be positive"));
    }
    if !(control_period > 0.0) {
        return Err(Error::InvalidParameter("control period must be positive"));
    }
    let mut plant = Plant::new(init, cfg, seed)?;
    let ticks = (duration / control_period).round() as usize;
    let mut log = Vec::with_capacity(ticks + 1);
    let mut cmd = ControlCommand::default();
    for k in 0..=ticks {
        plant.advance_to(k as f64 * control_period, &cmd);
        cmd = control(plant.state());
        log.push(TruthRow::new(plant.state(), &cmd));
    }
    Ok(log)
}
