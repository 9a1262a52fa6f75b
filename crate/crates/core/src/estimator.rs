//! Asynchronous extended Kalman filter and the resilient slip-angle gate.
//!
//! The state is `X = (x, y, θ, v)`: ground position, velocity attitude and
//! speed. Between measurements the filter propagates the circular drifting
//! model
//!
//! ```text
//! x⁺ = x + v cos θ Δ      y⁺ = y + v sin θ Δ
//! θ⁺ = θ + v Δ / r        v⁺ = v
//! ```
//!
//! written as `X⁺ = A(θ) X + Δ B u`. Each timestamp carries exactly one
//! sensor report, so an update only touches the rows of `C` belonging to that
//! sensor.

use nalgebra::{DMatrix, Matrix4, RowVector4, SMatrix, SVector, Vector4};
#[allow(unused_imports)] // resolved to inherent methods when std is linked
use num_traits::Float;

use crate::controller::ControlCommand;
use crate::frames::{wrap, PlanarVelocity};
use crate::{Error, Result, Vec2};

/// Index of each component in the state vector.
pub const IX: usize = 0;
pub const IY: usize = 1;
pub const ITHETA: usize = 2;
pub const IV: usize = 3;

/// Estimated state and covariance, valid at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateEstimate {
    pub xhat: Vector4<f64>,
    pub p: Matrix4<f64>,
    pub t: f64,
}

impl StateEstimate {
    pub fn new(xhat: Vector4<f64>, p: Matrix4<f64>, t: f64) -> Self {
        StateEstimate { xhat, p, t }
    }

    pub fn x(&self) -> f64 {
        self.xhat[IX]
    }

    pub fn y(&self) -> f64 {
        self.xhat[IY]
    }

    pub fn theta(&self) -> f64 {
        self.xhat[ITHETA]
    }

    pub fn v(&self) -> f64 {
        self.xhat[IV]
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x(), self.y())
    }

    pub fn velocity(&self) -> PlanarVelocity {
        PlanarVelocity::from_polar(self.v(), self.theta())
    }

    /// Largest asymmetry `max |P − Pᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (self.p - self.p.transpose()).amax()
    }

    /// Smallest eigenvalue of the symmetric part of `P`.
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (self.p + self.p.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }
}

/// Sensor that produced a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Sensor {
    /// Stereo tracking camera position, already mapped to the ground frame.
    Zed,
    /// Anchor-based position from the RGB-D camera.
    D435i,
    /// Velocity attitude from the IMU; the second channel carries the heading.
    Imu,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Zed, Sensor::D435i, Sensor::Imu];

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Zed => "zed",
            Sensor::D435i => "d435i",
            Sensor::Imu => "imu",
        }
    }

    pub fn from_name(s: &str) -> Result<Sensor> {
        Sensor::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or(Error::InvalidParameter("unknown sensor id"))
    }

    pub fn is_position(self) -> bool {
        matches!(self, Sensor::Zed | Sensor::D435i)
    }
}

impl core::fmt::Display for Sensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// One timestamped sensor report.
///
/// Position sensors fill both channels with a ground-frame fix `(x, y)`.
/// The IMU fills `value[0]` with `θ_IMU` and `value[1]` with its heading
/// `ψ_IMU`; only the first channel enters the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Measurement {
    pub t: f64,
    pub sensor: Sensor,
    pub value: [f64; 2],
    pub noise_var: [f64; 2],
}

/// Process noise, per-sensor measurement variances and input gains.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct NoiseModel {
    /// Diagonal of the process-noise intensity, per second, in state order.
    pub q_rate: [f64; 4],
    pub r_zed: f64,
    pub r_d435i: f64,
    pub r_imu: f64,
    pub b_delta: f64,
    pub b_omega: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            q_rate: [1e-3, 1e-3, 0.5, 0.5],
            r_zed: 0.1 * 0.1,
            r_d435i: 0.01 * 0.01,
            r_imu: 0.02 * 0.02,
            b_delta: 0.0,
            b_omega: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let r = [self.r_zed, self.r_d435i, self.r_imu];
        for &q in self.q_rate.iter().chain(&r) {
            if !(q >= 0.0 && q.is_finite()) {
                return Err(Error::InvalidParameter("noise variances must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn q(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from(self.q_rate))
    }

    pub fn variance(&self, sensor: Sensor) -> f64 {
        match sensor {
            Sensor::Zed => self.r_zed,
            Sensor::D435i => self.r_d435i,
            Sensor::Imu => self.r_imu,
        }
    }

    /// Builds a measurement stamped with this model's variance for `sensor`.
    pub fn measurement(&self, t: f64, sensor: Sensor, value: [f64; 2]) -> Measurement {
        let r = self.variance(sensor);
        Measurement {
            t,
            sensor,
            value,
            noise_var: [r, r],
        }
    }
}

/// How the covariance is propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TransitionModel {
    /// `A(θ)` exactly as in the state-space form of the module docs.
    #[default]
    Literal,
    /// `A(θ)` plus the `∂(v cos θ)/∂θ`, `∂(v sin θ)/∂θ` terms.
    FullJacobian,
}

/// How a two-channel position fix is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PositionUpdate {
    #[default]
    Block,
    Sequential,
}

/// Transition matrix at `est` for a step of `dt` on a circle of radius `r`.
pub fn transition_matrix(xhat: &Vector4<f64>, dt: f64, r: f64, model: TransitionModel) -> Matrix4<f64> {
    let (s, c) = xhat[ITHETA].sin_cos();
    let mut a = Matrix4::identity();
    a[(IX, IV)] = c * dt;
    a[(IY, IV)] = s * dt;
    a[(ITHETA, IV)] = dt / r;
    if model == TransitionModel::FullJacobian {
        let v = xhat[IV];
        a[(IX, ITHETA)] = -v * s * dt;
        a[(IY, ITHETA)] = v * c * dt;
    }
    a
}

/// Prediction step over `dt` seconds.
///
/// The mean follows the nonlinear drift model (which `A(θ) X` reproduces
/// exactly); the covariance uses `A` according to `model`, plus
/// `Q = Q_rate · dt`.
pub fn predict(
    est: &StateEstimate,
    u: &ControlCommand,
    dt: f64,
    nm: &NoiseModel,
    r_nominal: f64,
    model: TransitionModel,
) -> Result<StateEstimate> {
    if dt < 0.0 {
        return Err(Error::OutOfOrder("prediction with negative interval"));
    }
    if !dt.is_finite() {
        return Err(Error::InvalidParameter("prediction interval must be finite"));
    }
    if !(r_nominal > 0.0) {
        return Err(Error::InvalidParameter("nominal radius must be positive"));
    }
    if dt == 0.0 {
        return Ok(*est);
    }
    let literal = transition_matrix(&est.xhat, dt, r_nominal, TransitionModel::Literal);
    let bu = Vector4::new(0.0, 0.0, nm.b_delta * u.delta, nm.b_omega * u.omega);
    let mut xhat = literal * est.xhat + bu * dt;
    xhat[ITHETA] = wrap(xhat[ITHETA]);

    let a = transition_matrix(&est.xhat, dt, r_nominal, model);
    let p = a * est.p * a.transpose() + nm.q() * dt;
    Ok(StateEstimate {
        xhat,
        p: symmetrize(p),
        t: est.t + dt,
    })
}

fn symmetrize<const N: usize>(p: SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// Relative tolerance under which a negative eigenvalue of `S` counts as
/// rounding noise.
const PSD_TOL: f64 = 1e-12;
/// Eigenvalue ratio below which `S` is treated as singular.
const SINGULAR_TOL: f64 = 1e-12;
/// Eigenvalues of `S` below this are treated as zero so `S⁻¹` stays finite
/// when a noiseless filter has collapsed `P` towards underflow.
const ABS_EIG_FLOOR: f64 = 1e-150;

/// Generic measurement update with `M` rows.
///
/// `innovation` is `y − C X̂₋`, computed by the caller so angle channels can
/// be wrapped. Rows of `C` that are all zero carry no information; if every
/// row is zero the estimate is returned untouched. The covariance uses the
/// Joseph form, and a singular innovation covariance is inverted through its
/// pseudo-inverse.
pub fn update_rows<const M: usize>(
    est: &StateEstimate,
    c: &SMatrix<f64, M, 4>,
    innovation: &SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
) -> Result<StateEstimate> {
    if c.iter().all(|&e| e == 0.0) {
        return Ok(*est);
    }
    let s = symmetrize(c * est.p * c.transpose() + r);
    if !s.iter().all(|e| e.is_finite()) {
        return Err(Error::Numerical("innovation covariance is not finite"));
    }
    let s_dyn = DMatrix::from_column_slice(M, M, s.as_slice());
    let eig = s_dyn.clone().symmetric_eigenvalues();
    if eig.min() < -PSD_TOL * eig.amax().max(1.0) {
        return Err(Error::Numerical("innovation covariance is not positive semidefinite"));
    }
    let cutoff = (SINGULAR_TOL * eig.amax()).max(ABS_EIG_FLOOR);
    let s_inv = match s.cholesky() {
        Some(ch) if eig.min() > cutoff => ch.inverse(),
        _ => {
            let pinv = s_dyn
                .pseudo_inverse(cutoff)
                .map_err(|_| Error::Numerical("innovation covariance could not be inverted"))?;
            SMatrix::<f64, M, M>::from_column_slice(pinv.as_slice())
        }
    };
    let k = est.p * c.transpose() * s_inv;
    let mut xhat = est.xhat + k * innovation;
    xhat[ITHETA] = wrap(xhat[ITHETA]);
    let ikc = Matrix4::identity() - k * c;
    let p = ikc * est.p * ikc.transpose() + k * r * k.transpose();
    Ok(StateEstimate {
        xhat,
        p: symmetrize(p),
        t: est.t,
    })
}

fn check_variance(v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter("measurement variance must be finite and non-negative"))
    }
}

fn scalar_row(i: usize) -> RowVector4<f64> {
    let mut c = RowVector4::zeros();
    c[i] = 1.0;
    c
}

fn scalar_update(est: &StateEstimate, i: usize, y: f64, var: f64) -> Result<StateEstimate> {
    let mut innov = y - est.xhat[i];
    if i == ITHETA {
        innov = wrap(innov);
    }
    update_rows(
        est,
        &scalar_row(i),
        &SVector::<f64, 1>::new(innov),
        &SMatrix::<f64, 1, 1>::new(var),
    )
}

/// Measurement update with the reporting sensor's rows of `C`.
pub fn update_with(est: &StateEstimate, m: &Measurement, mode: PositionUpdate) -> Result<StateEstimate> {
    if m.t != est.t {
        return Err(Error::OutOfOrder("measurement time differs from the estimate time"));
    }
    match m.sensor {
        Sensor::Imu => {
            check_variance(m.noise_var[0])?;
            scalar_update(est, ITHETA, m.value[0], m.noise_var[0])
        }
        Sensor::Zed | Sensor::D435i => {
            check_variance(m.noise_var[0])?;
            check_variance(m.noise_var[1])?;
            match mode {
                PositionUpdate::Block => {
                    let c = SMatrix::<f64, 2, 4>::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
                    let innov = SVector::<f64, 2>::new(m.value[0] - est.x(), m.value[1] - est.y());
                    let r = SMatrix::<f64, 2, 2>::new(m.noise_var[0], 0.0, 0.0, m.noise_var[1]);
                    update_rows(est, &c, &innov, &r)
                }
                PositionUpdate::Sequential => {
                    let e = scalar_update(est, IX, m.value[0], m.noise_var[0])?;
                    scalar_update(&e, IY, m.value[1], m.noise_var[1])
                }
            }
        }
    }
}

/// [`update_with`] using a block position update.
pub fn update(est: &StateEstimate, m: &Measurement) -> Result<StateEstimate> {
    update_with(est, m, PositionUpdate::Block)
}

/// Default slip-angle abrupt-change threshold (rad/s).
pub const DEFAULT_SLIP_THRESHOLD: f64 = 20.0;

/// Resilient sideslip estimate.
///
/// Passes `θ_k − ψ` through when the attitude moved by less than `h·dt`
/// (strictly); otherwise replaces `θ_k` with the circular-drift prediction
/// `θ_{k−1} + v_{k−1} dt / r̂`.
pub fn resilient_sideslip(
    prev: &StateEstimate,
    cur: &StateEstimate,
    psi_now: f64,
    r_hat: f64,
    dt: f64,
    h: f64,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("slip gate needs dt > 0"));
    }
    if !(r_hat > 0.0) {
        return Err(Error::InvalidParameter("slip gate needs a positive radius"));
    }
    let undefined = Error::Domain("velocity attitude undefined at zero speed");
    let th_prev = prev.velocity().attitude().ok_or(undefined.clone())?;
    let th_cur = cur.velocity().attitude().ok_or(undefined)?;
    if wrap(th_cur - th_prev).abs() < h * dt {
        Ok(wrap(th_cur - psi_now))
    } else {
        Ok(wrap(th_prev + prev.v() * dt / r_hat - psi_now))
    }
}

/// Filter settings shared by every [`AsyncEkf`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EkfSettings {
    pub noise: NoiseModel,
    pub transition: TransitionModel,
    pub position_update: PositionUpdate,
}

/// Stateful asynchronous EKF: predicts to each measurement time and applies
/// the single-sensor update. Measurements older than the estimate are
/// rejected.
#[derive(Debug, Clone)]
pub struct AsyncEkf {
    est: StateEstimate,
    settings: EkfSettings,
    consumed: usize,
}

impl AsyncEkf {
    pub fn new(init: StateEstimate, settings: EkfSettings) -> Result<Self> {
        settings.noise.validate()?;
        Ok(AsyncEkf {
            est: init,
            settings,
            consumed: 0,
        })
    }

    pub fn estimate(&self) -> &StateEstimate {
        &self.est
    }

    pub fn settings(&self) -> &EkfSettings {
        &self.settings
    }

    /// Number of measurements applied so far.
    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Estimate propagated to `t` without modifying the filter.
    pub fn predicted(&self, t: f64, u: &ControlCommand, r_nominal: f64) -> Result<StateEstimate> {
        let mut est = predict(
            &self.est,
            u,
            t - self.est.t,
            &self.settings.noise,
            r_nominal,
            self.settings.transition,
        )?;
        // est.t + (t − est.t) may round away from t
        est.t = t;
        Ok(est)
    }

    /// Predicts to `m.t` with input `u` and radius `r_nominal`, then updates.
    pub fn process(&mut self, m: &Measurement, u: &ControlCommand, r_nominal: f64) -> Result<&StateEstimate> {
        if m.t < self.est.t {
            return Err(Error::OutOfOrder("measurement older than the current estimate"));
        }
        let prior = self.predicted(m.t, u, r_nominal)?;
        self.est = update_with(&prior, m, self.settings.position_update)?;
        self.consumed += 1;
        Ok(&self.est)
    }
}
