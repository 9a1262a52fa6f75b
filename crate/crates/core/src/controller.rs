//! Two-loop drift controller.
//!
//! The sideslip loop drives the front-wheel steering angle `δ` so the
//! estimated sideslip tracks `β_ref`. The circle loop drives the wheel speed
//! `ω` so the fitted trajectory radius tracks a reference radius that bends
//! the path towards the commanded centre:
//!
//! ```text
//! r_ref = r0 − γ (π/2 − φ)
//! ```
//!
//! with `φ` the circumnavigation angle (see [`crate::frames::phi_of`]).
//! Both loops are PID with a constant feed-forward, anti-windup clamp on the
//! integral and output saturation. The path is anticlockwise.

use core::f64::consts::FRAC_PI_2;

#[allow(unused_imports)] // resolved to inherent methods when std is linked
use num_traits::Float;

use crate::estimator::StateEstimate;
use crate::frames::{phi_of, wrap, PlanarVelocity};
use crate::{Error, Result, Vec2};

/// Fraction of `r0` below which the reference radius is clamped.
pub const MIN_RADIUS_FRACTION: f64 = 0.2;

/// Commanded circle and drift attitude.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CircleTask {
    pub x0: f64,
    pub y0: f64,
    /// Desired radius (m).
    pub r0: f64,
    /// Desired sideslip (rad), in (−π, 0) for the anticlockwise drift.
    pub beta_ref: f64,
    /// Radius adjustment rate (m/rad).
    pub gamma: f64,
    /// Nominal lap period (s), used to size the wheel-speed feed-forward.
    pub tau_nominal: f64,
}

impl Default for CircleTask {
    fn default() -> Self {
        CircleTask {
            x0: 0.0,
            y0: 0.0,
            r0: 1.0,
            beta_ref: -1.4,
            gamma: 0.5,
            tau_nominal: 4.05,
        }
    }
}

impl CircleTask {
    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x0, self.y0)
    }

    /// Nominal speed along the circle, `2π r0 / τ`.
    pub fn nominal_speed(&self) -> f64 {
        core::f64::consts::TAU * self.r0 / self.tau_nominal
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0) {
            return Err(Error::InvalidParameter("r0 must be positive"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter("gamma must be positive"));
        }
        if !(self.beta_ref < 0.0 && self.beta_ref > -core::f64::consts::PI) {
            return Err(Error::InvalidParameter("beta_ref must lie in (-pi, 0)"));
        }
        if !(self.tau_nominal > 0.0) {
            return Err(Error::InvalidParameter("tau_nominal must be positive"));
        }
        Ok(())
    }
}

/// Gains, feed-forward and limits of one PID loop.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub ff: f64,
    /// Bound on |∫e|.
    pub i_limit: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.out_min < self.out_max) {
            return Err(Error::InvalidParameter("out_min must be below out_max"));
        }
        if !(self.i_limit >= 0.0) {
            return Err(Error::InvalidParameter("i_limit must be non-negative"));
        }
        Ok(())
    }
}

/// Integrator and previous error of one loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// Steering angle `δ` (rad) and wheel rotational speed `ω` (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlCommand {
    pub delta: f64,
    pub omega: f64,
}

impl ControlCommand {
    pub fn new(delta: f64, omega: f64) -> Self {
        ControlCommand { delta, omega }
    }
}

/// One PID update.
///
/// The integral uses the trapezoidal rule (an empty history counts as a
/// previous error of zero) and is clamped to `±i_limit`; the derivative is the
/// backward difference of the error and is zero on the first call.
pub fn pid_step(g: &PidGains, e: f64, dt: f64, state: PidState) -> Result<(f64, PidState)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("PID step needs dt > 0"));
    }
    let prev = state.prev_error.unwrap_or(0.0);
    let integral = (state.integral + 0.5 * (prev + e) * dt).clamp(-g.i_limit, g.i_limit);
    let derivative = match state.prev_error {
        Some(p) => (e - p) / dt,
        None => 0.0,
    };
    let out = g.ff + g.kp * e + g.ki * integral + g.kd * derivative;
    Ok((
        out.clamp(g.out_min, g.out_max),
        PidState {
            integral,
            prev_error: Some(e),
        },
    ))
}

/// Reference radius `r0 − γ(π/2 − φ)`, floored at `0.2·r0`.
pub fn reference_radius(phi: f64, task: &CircleTask) -> f64 {
    (task.r0 - task.gamma * (FRAC_PI_2 - phi)).max(MIN_RADIUS_FRACTION * task.r0)
}

/// Right-hand side of the circumnavigation dynamics under perfect radius
/// tracking: `ḋ = v cos φ`, `φ̇ = v / (r0 − γ(π/2 − φ)) − (v/d) sin φ`.
pub fn circumnav_derivatives(d: f64, phi: f64, v: f64, task: &CircleTask) -> Result<(f64, f64)> {
    if !(d > 0.0) {
        return Err(Error::Domain("distance to the center must be positive"));
    }
    let r_eff = task.r0 - task.gamma * (FRAC_PI_2 - phi);
    if !(r_eff > 0.0) {
        return Err(Error::Domain("effective radius must be positive"));
    }
    Ok((v * phi.cos(), v / r_eff - v / d * phi.sin()))
}

/// Circumnavigation dynamics as closed by the controller: `φ` is read as an
/// angle (wrapped) and the radius comes from [`reference_radius`], floor
/// included. Coincides with [`circumnav_derivatives`] for wrapped `φ` whenever
/// the floor is inactive.
pub fn guided_derivatives(d: f64, phi: f64, v: f64, task: &CircleTask) -> Result<(f64, f64)> {
    if !(d > 0.0) {
        return Err(Error::Domain("distance to the center must be positive"));
    }
    let r_ref = reference_radius(wrap(phi), task);
    Ok((v * phi.cos(), v / r_ref - v / d * phi.sin()))
}

/// Loop errors and outputs of one controller update, kept for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlStep {
    pub command: ControlCommand,
    pub phi: f64,
    pub r_ref: f64,
    pub e_beta: f64,
    pub e_r: f64,
}

/// Stateless controller update: computes `φ`, `r_ref`, both errors and both
/// PID outputs, returning the command with the advanced loop states.
#[allow(clippy::too_many_arguments)]
pub fn controller_step(
    est: &StateEstimate,
    beta_hat: f64,
    r_fit: f64,
    task: &CircleTask,
    sideslip: &PidGains,
    circle: &PidGains,
    dt: f64,
    states: (PidState, PidState),
) -> Result<(ControlStep, (PidState, PidState))> {
    let vel = PlanarVelocity::from_polar(est.v(), est.theta());
    let phi = phi_of(est.position(), &vel, task.center())?;
    let r_ref = reference_radius(phi, task);
    let e_beta = wrap(beta_hat - task.beta_ref);
    let e_r = r_fit - r_ref;
    let (delta, s_state) = pid_step(sideslip, e_beta, dt, states.0)?;
    let (omega, c_state) = pid_step(circle, e_r, dt, states.1)?;
    Ok((
        ControlStep {
            command: ControlCommand { delta, omega },
            phi,
            r_ref,
            e_beta,
            e_r,
        },
        (s_state, c_state),
    ))
}

/// Stateful two-loop controller.
#[derive(Debug, Clone)]
pub struct DriftController {
    pub task: CircleTask,
    pub sideslip: PidGains,
    pub circle: PidGains,
    states: (PidState, PidState),
}

impl DriftController {
    pub fn new(task: CircleTask, sideslip: PidGains, circle: PidGains) -> Result<Self> {
        task.validate()?;
        sideslip.validate()?;
        circle.validate()?;
        Ok(DriftController {
            task,
            sideslip,
            circle,
            states: Default::default(),
        })
    }

    pub fn step(
        &mut self,
        est: &StateEstimate,
        beta_hat: f64,
        r_fit: f64,
        dt: f64,
    ) -> Result<ControlStep> {
        let (step, states) = controller_step(
            est,
            beta_hat,
            r_fit,
            &self.task,
            &self.sideslip,
            &self.circle,
            dt,
            self.states,
        )?;
        self.states = states;
        Ok(step)
    }

    pub fn loop_states(&self) -> (PidState, PidState) {
        self.states
    }

    pub fn reset(&mut self) {
        self.states = Default::default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::StateEstimate;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;
    use nalgebra::{Matrix4, Vector4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gains(kp: f64, ki: f64, kd: f64, ff: f64) -> PidGains {
        PidGains {
            kp,
            ki,
            kd,
            ff,
            i_limit: 1e9,
            out_min: -1e9,
            out_max: 1e9,
        }
    }

    fn estimate_at(x: f64, y: f64, theta: f64, v: f64) -> StateEstimate {
        StateEstimate::new(Vector4::new(x, y, theta, v), Matrix4::identity(), 0.0)
    }

    #[test]
    fn reference_radius_examples() {
        let task = CircleTask::default();
        assert_eq!(reference_radius(FRAC_PI_2, &task), 1.0);
        assert_abs_diff_eq!(reference_radius(FRAC_PI_2 + 0.1, &task), 1.05, epsilon = 1e-12);
        assert_abs_diff_eq!(reference_radius(FRAC_PI_2 - 0.2, &task), 0.9, epsilon = 1e-12);
        // floor
        assert_abs_diff_eq!(reference_radius(-PI, &task), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn reference_radius_slope_is_gamma() {
        let task = CircleTask {
            gamma: 0.37,
            ..Default::default()
        };
        let h = 1e-6;
        for i in 0..50 {
            let phi = 0.2 + 0.05 * i as f64;
            let slope = (reference_radius(phi + h, &task) - reference_radius(phi - h, &task)) / (2.0 * h);
            assert_abs_diff_eq!(slope, task.gamma, epsilon = 1e-6);
        }
    }

    #[test]
    fn pid_examples() {
        let (out, _) = pid_step(&gains(1.0, 1.0, 1.0, 0.7), 0.0, 0.1, PidState::default()).unwrap();
        assert_eq!(out, 0.7);

        let (out, _) = pid_step(&gains(2.0, 0.0, 0.0, 0.3), 1.0, 0.1, PidState::default()).unwrap();
        assert_abs_diff_eq!(out, 2.3, epsilon = 1e-15);

        // trapezoid oracle: ∫ over [0, 0.5] of a ramp 0→1 is 0.25, then +0.5
        let g = gains(0.0, 1.0, 0.0, 0.0);
        let (o1, s1) = pid_step(&g, 1.0, 0.5, PidState::default()).unwrap();
        let (o2, _) = pid_step(&g, 1.0, 0.5, s1).unwrap();
        assert_abs_diff_eq!(o1, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(o2, 0.75, epsilon = 1e-15);

        assert!(pid_step(&g, 1.0, 0.0, PidState::default()).is_err());
        assert!(pid_step(&g, 1.0, -0.1, PidState::default()).is_err());
    }

    #[test]
    fn pid_derivative_and_saturation() {
        let g = gains(0.0, 0.0, 2.0, 0.0);
        let (o1, s) = pid_step(&g, 1.0, 0.1, PidState::default()).unwrap();
        assert_eq!(o1, 0.0);
        let (o2, _) = pid_step(&g, 1.5, 0.1, s).unwrap();
        assert_abs_diff_eq!(o2, 2.0 * 0.5 / 0.1, epsilon = 1e-12);

        let sat = PidGains {
            out_min: -0.5,
            out_max: 0.5,
            ..gains(10.0, 0.0, 0.0, 0.0)
        };
        assert_eq!(pid_step(&sat, 1.0, 0.1, PidState::default()).unwrap().0, 0.5);
        assert_eq!(pid_step(&sat, -1.0, 0.1, PidState::default()).unwrap().0, -0.5);
    }

    #[test]
    fn integrator_clamp_holds_over_long_runs() {
        let g = PidGains {
            i_limit: 0.8,
            ..gains(0.0, 1.0, 0.0, 0.0)
        };
        let mut s = PidState::default();
        for _ in 0..100_000 {
            let (_, n) = pid_step(&g, 1.0, 0.01, s).unwrap();
            assert!(n.integral.abs() <= g.i_limit);
            s = n;
        }
        assert_eq!(s.integral, 0.8);
    }

    #[test]
    fn circumnav_examples() {
        let task = CircleTask::default();
        let (dd, dp) = circumnav_derivatives(1.0, FRAC_PI_2, 1.4, &task).unwrap();
        assert_abs_diff_eq!(dd, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dp, 0.0, epsilon = 1e-15);

        let (dd, dp) = circumnav_derivatives(1.0, 0.0, 1.0, &task).unwrap();
        assert_abs_diff_eq!(dd, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dp, 1.0 / (1.0 - 0.5 * FRAC_PI_2), epsilon = 1e-12);

        assert_eq!(circumnav_derivatives(0.7, 0.3, 0.0, &task).unwrap(), (0.0, 0.0));
        assert!(circumnav_derivatives(0.0, 0.3, 1.0, &task).is_err());
        let steep = CircleTask {
            gamma: 2.0,
            ..task
        };
        assert!(circumnav_derivatives(1.0, 0.0, 1.0, &steep).is_err());
    }

    #[test]
    fn nominal_state_returns_feedforward() {
        let task = CircleTask::default();
        let s = gains(1.0, 0.5, 0.1, -0.4);
        let c = gains(-5.0, -1.0, 0.0, 30.0);
        // at (1, 0) heading north: φ = π/2
        let est = estimate_at(1.0, 0.0, FRAC_PI_2, 1.5);
        let (step, _) =
            controller_step(&est, task.beta_ref, 1.0, &task, &s, &c, 0.01, Default::default()).unwrap();
        assert_abs_diff_eq!(step.command.delta, -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(step.command.omega, 30.0, epsilon = 1e-12);

        let p_only = gains(1.0, 0.0, 0.0, -0.4);
        let (step, _) = controller_step(
            &est,
            task.beta_ref + 0.1,
            1.0,
            &task,
            &p_only,
            &c,
            0.01,
            Default::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(step.command.delta, -0.4 + 0.1, epsilon = 1e-12);
    }

    #[test]
    fn controller_step_composes_sub_operations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let task = CircleTask {
            x0: 0.3,
            y0: -0.2,
            ..Default::default()
        };
        let s = gains(-0.5, -0.3, 0.02, -0.4);
        let c = gains(-8.0, -2.0, 0.1, 30.0);
        let mut ctl = DriftController::new(task, s, c).unwrap();
        let mut states = (PidState::default(), PidState::default());
        for _ in 0..200 {
            let est = estimate_at(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-PI..PI),
                rng.random_range(0.2..3.0),
            );
            let beta = rng.random_range(-2.0..0.0);
            let r_fit = rng.random_range(0.5..2.0);

            // oracle: compose phi_of, reference_radius and pid_step by hand
            let vel = PlanarVelocity::from_polar(est.v(), est.theta());
            let phi = phi_of(est.position(), &vel, task.center()).unwrap();
            let r_ref = reference_radius(phi, &task);
            let (d, ns) = pid_step(&s, wrap(beta - task.beta_ref), 0.01, states.0).unwrap();
            let (w, nc) = pid_step(&c, r_fit - r_ref, 0.01, states.1).unwrap();
            states = (ns, nc);

            let step = ctl.step(&est, beta, r_fit, 0.01).unwrap();
            assert_eq!(step.command, ControlCommand::new(d, w));
            assert_eq!(step.phi, phi);
            assert_eq!(step.r_ref, r_ref);
        }
    }

    #[test]
    fn controller_propagates_phi_errors() {
        let task = CircleTask::default();
        let g = gains(1.0, 0.0, 0.0, 0.0);
        let still = estimate_at(1.0, 0.0, 0.0, 0.0);
        assert!(controller_step(&still, -1.4, 1.0, &task, &g, &g, 0.01, Default::default()).is_err());
        let centered = estimate_at(0.0, 0.0, 0.0, 1.0);
        assert!(controller_step(&centered, -1.4, 1.0, &task, &g, &g, 0.01, Default::default()).is_err());
    }

    fn rk4(d: f64, phi: f64, v: f64, h: f64, task: &CircleTask) -> Result<(f64, f64)> {
        let f = |d: f64, p: f64| guided_derivatives(d, p, v, task);
        let k1 = f(d, phi)?;
        let k2 = f(d + 0.5 * h * k1.0, phi + 0.5 * h * k1.1)?;
        let k3 = f(d + 0.5 * h * k2.0, phi + 0.5 * h * k2.1)?;
        let k4 = f(d + h * k3.0, phi + h * k3.1)?;
        Ok((
            d + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            phi + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        ))
    }

    #[test]
    fn guided_matches_literal_away_from_the_floor() {
        let task = CircleTask::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = rng.random_range(0.1..5.0);
            let phi = rng.random_range(0.0..PI);
            let v = rng.random_range(0.0..3.0);
            assert_eq!(
                guided_derivatives(d, phi, v, &task).unwrap(),
                circumnav_derivatives(d, phi, v, &task).unwrap()
            );
        }
        // past the seam the literal radius goes negative, the guided one is floored
        assert!(circumnav_derivatives(1.0, -3.0, 1.0, &task).is_err());
        let (_, dp) = guided_derivatives(1.0, -3.0, 1.0, &task).unwrap();
        assert_abs_diff_eq!(dp, 1.0 / 0.2 - (-3.0f64).sin(), epsilon = 1e-12);
    }

    #[test]
    fn circumnavigation_converges_from_random_starts() {
        let task = CircleTask::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..20 {
            let mut d = rng.random_range(0.3..3.0);
            let mut phi = rng.random_range(0.01..PI - 0.01);
            for _ in 0..60_000 {
                (d, phi) = rk4(d, phi, 1.4, 1e-3, &task).unwrap();
            }
            assert!((d - task.r0).abs() < 1e-3, "d = {d}");
            assert!(wrap(phi - FRAC_PI_2).abs() < 1e-3, "phi = {phi}");
        }
    }

    proptest! {
        #[test]
        fn proportional_only_is_memoryless(e0 in -5.0f64..5.0, e1 in -5.0f64..5.0, hist in -5.0f64..5.0) {
            let g = gains(1.7, 0.0, 0.0, 0.2);
            let (fresh, _) = pid_step(&g, e1, 0.01, PidState::default()).unwrap();
            let (_, s) = pid_step(&g, hist, 0.01, PidState::default()).unwrap();
            let (_, s) = pid_step(&g, e0, 0.01, s).unwrap();
            let (with_history, _) = pid_step(&g, e1, 0.01, s).unwrap();
            prop_assert_eq!(fresh, with_history);
        }

        #[test]
        fn controller_is_translation_invariant(
            x in -3.0f64..3.0, y in -3.0f64..3.0, th in -3.1f64..3.1, v in 0.3f64..3.0,
            sx in -50.0f64..50.0, sy in -50.0f64..50.0, beta in -2.0f64..0.0, r in 0.5f64..2.0,
        ) {
            prop_assume!(x.hypot(y) > 0.05);
            let task = CircleTask::default();
            let moved = CircleTask { x0: sx, y0: sy, ..task };
            let g = gains(-0.5, -0.2, 0.0, -0.4);
            let c = gains(-8.0, -1.0, 0.0, 30.0);
            let (a, _) = controller_step(&estimate_at(x, y, th, v), beta, r, &task, &g, &c, 0.01, Default::default()).unwrap();
            let (b, _) = controller_step(&estimate_at(x + sx, y + sy, th, v), beta, r, &moved, &g, &c, 0.01, Default::default()).unwrap();
            prop_assert!((a.command.delta - b.command.delta).abs() < 1e-9);
            prop_assert!((a.command.omega - b.command.omega).abs() < 1e-6);
        }
    }
}
