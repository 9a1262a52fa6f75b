//! Closed-loop runner: plant, sensors, estimators, circle fit and controller.
//!
//! Time advances from event to event. Events are the merged sensor schedule
//! and the control ticks; on equal timestamps sensor reports are handled
//! first, so a report never sees the command computed at its own instant.
//! Three filters run side by side on the same reports (EKF on everything,
//! ZED-only, D435i-only; the IMU feeds all three) and the configured source
//! drives the controller.

use alloc::vec::Vec;

#[allow(unused_imports)] // resolved to inherent methods when std is linked
use num_traits::Float;
use nalgebra::{Matrix4, Vector4};

use crate::circlefit::{FitSettings, PointWindow};
use crate::controller::{CircleTask, ControlCommand, DriftController, PidGains};
use crate::estimator::{
    resilient_sideslip, AsyncEkf, EkfSettings, Measurement, Sensor, StateEstimate, DEFAULT_SLIP_THRESHOLD,
};
use crate::frames::{body_yaw, wrap, zed_to_ground};
use crate::metrics::{compute_metrics, lap_count, EstimateRow, MetricsReport, TimeWindow};
use crate::plant::{Plant, PlantConfig, PlantState, TruthRow};
use crate::sensors::{anchor_localize, build_schedule, AnchorModel, SensorNoise, SensorSchedule, SensorSuite};
use crate::{Error, Result};

/// State source handed to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Source {
    Truth,
    Zed,
    D435i,
    #[default]
    Ekf,
}

impl Source {
    /// Sources backed by a filter, in log order.
    pub const FILTERS: [Source; 3] = [Source::Ekf, Source::Zed, Source::D435i];

    pub fn name(self) -> &'static str {
        match self {
            Source::Truth => "truth",
            Source::Zed => "zed",
            Source::D435i => "d435i",
            Source::Ekf => "ekf",
        }
    }

    pub fn from_name(s: &str) -> Result<Source> {
        [Source::Truth, Source::Zed, Source::D435i, Source::Ekf]
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or(Error::InvalidParameter("unknown estimator source"))
    }

    /// Whether a filter of this source consumes reports of `sensor`.
    pub fn consumes(self, sensor: Sensor) -> bool {
        match self {
            Source::Truth => false,
            Source::Ekf => true,
            Source::Zed => matches!(sensor, Sensor::Zed | Sensor::Imu),
            Source::D435i => matches!(sensor, Sensor::D435i | Sensor::Imu),
        }
    }
}

/// Circle-fit settings of the radius estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RadiusEstimator {
    /// Points in the sliding window.
    pub window: usize,
    /// Control ticks between two points.
    pub decimation: usize,
    /// ℓ1 weight; absent selects the data-driven default.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub lambda: Option<f64>,
}

impl Default for RadiusEstimator {
    fn default() -> Self {
        RadiusEstimator {
            window: 40,
            decimation: 5,
            lambda: None,
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ExperimentConfig {
    pub duration: f64,
    pub seed: u64,
    pub source: Source,
    /// Controller rate (Hz).
    pub control_rate: f64,
    /// Start of the window used for the summary statistics (s).
    pub metrics_from: f64,
    /// Position error that aborts the run (m).
    pub divergence_limit: f64,
    /// Slip-angle abrupt-change threshold (rad/s).
    pub slip_threshold: f64,
    pub task: CircleTask,
    pub sideslip_gains: PidGains,
    pub circle_gains: PidGains,
    pub radius: RadiusEstimator,
    pub ekf: EkfSettings,
    /// Diagonal of the initial estimate covariance.
    pub p0: [f64; 4],
    pub schedule: SensorSchedule,
    pub sensors: SensorNoise,
    pub anchor: AnchorModel,
    pub plant: PlantConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let task = CircleTask::default();
        let plant = PlantConfig::default();
        let omega_ff = task.nominal_speed() / plant.g_omega;
        ExperimentConfig {
            duration: 50.0,
            seed: 1,
            source: Source::Ekf,
            control_rate: 100.0,
            metrics_from: 10.0,
            divergence_limit: 10.0,
            slip_threshold: DEFAULT_SLIP_THRESHOLD,
            task,
            sideslip_gains: PidGains {
                kp: -0.3,
                ki: -1.0,
                kd: 0.0,
                ff: -0.4,
                i_limit: 0.5,
                out_min: -0.8,
                out_max: 0.8,
            },
            circle_gains: PidGains {
                kp: -8.0,
                ki: -4.0,
                kd: 0.0,
                ff: omega_ff,
                i_limit: 3.0,
                out_min: 0.0,
                out_max: 60.0,
            },
            radius: RadiusEstimator::default(),
            ekf: EkfSettings::default(),
            p0: [0.01, 0.01, 0.01, 0.04],
            schedule: SensorSchedule::default(),
            sensors: SensorNoise::default(),
            anchor: AnchorModel::default(),
            plant,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter("duration must be positive"));
        }
        if !(self.control_rate > 0.0) {
            return Err(Error::InvalidParameter("control_rate must be positive"));
        }
        if !(self.divergence_limit > 0.0) {
            return Err(Error::InvalidParameter("divergence_limit must be positive"));
        }
        if !(self.slip_threshold > 0.0) {
            return Err(Error::InvalidParameter("slip_threshold must be positive"));
        }
        if self.radius.window < 3 || self.radius.decimation == 0 {
            return Err(Error::InvalidParameter("radius window needs >= 3 points and decimation >= 1"));
        }
        if self.p0.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidParameter("p0 entries must be non-negative"));
        }
        self.task.validate()?;
        self.sideslip_gains.validate()?;
        self.circle_gains.validate()?;
        self.ekf.noise.validate()?;
        self.schedule.validate()?;
        self.anchor.validate()?;
        self.plant.validate()
    }

    /// Plant state at `t = 0`: on the commanded circle at bearing 0, already
    /// drifting at `β_ref` with the speed of that circle.
    pub fn initial_plant(&self) -> PlantState {
        let v = self.plant.steady_speed(self.task.r0);
        PlantState::on_circle(self.task.center(), self.task.r0, 0.0, v, self.task.beta_ref)
    }

    /// Initial estimate shared by every filter.
    pub fn initial_estimate(&self) -> StateEstimate {
        let s = self.initial_plant();
        StateEstimate::new(
            Vector4::new(s.x, s.y, s.theta(), s.v),
            Matrix4::from_diagonal(&Vector4::from(self.p0)),
            0.0,
        )
    }

    pub fn control_period(&self) -> f64 {
        1.0 / self.control_rate
    }

    pub fn metrics_window(&self) -> TimeWindow {
        TimeWindow {
            from: self.metrics_from,
            to: f64::INFINITY,
        }
    }
}

/// Inputs in effect for a report: the last command, the reference radius of
/// the circle loop and the fitted radius.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CommandRow {
    pub t: f64,
    pub delta: f64,
    pub omega: f64,
    pub r_ref: f64,
    pub r_fit: f64,
}

impl CommandRow {
    pub fn command(&self) -> ControlCommand {
        ControlCommand::new(self.delta, self.omega)
    }
}

/// One filter plus the slip-angle gate on its output.
#[derive(Debug, Clone)]
pub struct FilterChannel {
    pub source: Source,
    ekf: AsyncEkf,
    slip_threshold: f64,
    beta_hat: f64,
    psi_meas: f64,
    log: Vec<EstimateRow>,
}

impl FilterChannel {
    pub fn new(source: Source, init: StateEstimate, psi0: f64, settings: EkfSettings, slip_threshold: f64) -> Result<Self> {
        Ok(FilterChannel {
            source,
            ekf: AsyncEkf::new(init, settings)?,
            slip_threshold,
            beta_hat: wrap(init.theta() - psi0),
            psi_meas: psi0,
            log: Vec::new(),
        })
    }

    pub fn estimate(&self) -> &StateEstimate {
        self.ekf.estimate()
    }

    pub fn beta_hat(&self) -> f64 {
        self.beta_hat
    }

    pub fn consumed(&self) -> usize {
        self.ekf.consumed()
    }

    pub fn log(&self) -> &[EstimateRow] {
        &self.log
    }

    pub fn into_log(self) -> Vec<EstimateRow> {
        self.log
    }

    /// Estimate propagated to `t` under the inputs in effect.
    pub fn predicted(&self, t: f64, inputs: &CommandRow) -> Result<StateEstimate> {
        self.ekf.predicted(t, &inputs.command(), inputs.r_ref)
    }

    /// Applies `m` if this channel consumes its sensor and logs the gated
    /// estimate. Returns whether the report was used.
    pub fn consume(&mut self, m: &Measurement, inputs: &CommandRow) -> Result<bool> {
        if !self.source.consumes(m.sensor) {
            return Ok(false);
        }
        if m.sensor == Sensor::Imu {
            self.psi_meas = m.value[1];
        }
        let prev = *self.ekf.estimate();
        let cur = *self.ekf.process(m, &inputs.command(), inputs.r_ref)?;
        let dt = cur.t - prev.t;
        self.beta_hat = if dt > 0.0 && prev.v() != 0.0 && cur.v() != 0.0 {
            resilient_sideslip(&prev, &cur, self.psi_meas, inputs.r_fit, dt, self.slip_threshold)?
        } else {
            wrap(cur.theta() - self.psi_meas)
        };
        self.log.push(EstimateRow {
            t: cur.t,
            x: cur.x(),
            y: cur.y(),
            theta: cur.theta(),
            v: cur.v(),
            beta: self.beta_hat,
        });
        Ok(true)
    }
}

/// Runs `source`'s filter over a recorded measurement stream. `commands`
/// supplies the inputs in effect (the last row strictly before each report);
/// without it the command is zero and both radii equal `r0`.
pub fn replay(cfg: &ExperimentConfig, source: Source, measurements: &[Measurement], commands: &[CommandRow]) -> Result<Vec<EstimateRow>> {
    if source == Source::Truth {
        return Err(Error::InvalidParameter("replay needs a filter source"));
    }
    let psi0 = cfg.initial_plant().psi;
    let mut ch = FilterChannel::new(source, cfg.initial_estimate(), psi0, cfg.ekf, cfg.slip_threshold)?;
    let fallback = CommandRow {
        t: 0.0,
        delta: 0.0,
        omega: 0.0,
        r_ref: cfg.task.r0,
        r_fit: cfg.task.r0,
    };
    let mut last_t = f64::NEG_INFINITY;
    for m in measurements {
        if m.t <= last_t {
            return Err(Error::OutOfOrder("measurement timestamps must be strictly increasing"));
        }
        last_t = m.t;
        let i = commands.partition_point(|c| c.t < m.t);
        let inputs = if i == 0 { fallback } else { commands[i - 1] };
        ch.consume(m, &inputs)?;
    }
    Ok(ch.into_log())
}

/// Per-source estimation statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SourceReport {
    pub source: Source,
    pub consumed: usize,
    pub metrics: MetricsReport,
}

/// Summary of a run over the metrics window.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentReport {
    pub source: Source,
    pub seed: u64,
    pub duration: f64,
    pub metrics_from: f64,
    /// Laps over the whole run.
    pub laps_total: f64,
    /// Tracking statistics of the true trajectory, laps and lap period.
    pub tracking: MetricsReport,
    /// Estimation statistics of each filter.
    pub estimators: Vec<SourceReport>,
    /// Sensor reports delivered (position fixes and IMU readings).
    pub position_fixes: usize,
    pub imu_readings: usize,
    /// Scheduled D435i ticks without the anchor in view.
    pub anchor_dropouts: usize,
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub truth: Vec<TruthRow>,
    pub measurements: Vec<Measurement>,
    pub estimates: Vec<(Source, Vec<EstimateRow>)>,
    pub commands: Vec<CommandRow>,
    pub report: ExperimentReport,
}

impl RunOutput {
    pub fn estimates_of(&self, source: Source) -> Option<&[EstimateRow]> {
        self.estimates.iter().find(|(s, _)| *s == source).map(|(_, l)| l.as_slice())
    }
}

enum Event {
    Sensor(Sensor),
    Control,
}

fn truth_estimate(s: &PlantState) -> StateEstimate {
    StateEstimate::new(Vector4::new(s.x, s.y, s.theta(), s.v), Matrix4::zeros(), s.t)
}

/// Simulates `cfg.duration` seconds of closed-loop drifting.
pub fn run_closed_loop(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let init = cfg.initial_plant();
    let mut plant = Plant::new(init, cfg.plant, cfg.seed)?;
    let zed_yaw0 = body_yaw(init.psi);
    let mut suite = SensorSuite::new(cfg.sensors, cfg.anchor, zed_yaw0, cfg.seed)?;
    let schedule = build_schedule(
        &SensorSchedule {
            seed: cfg.seed,
            ..cfg.schedule
        },
        cfg.duration,
    )?;

    let est0 = cfg.initial_estimate();
    let mut channels = Source::FILTERS
        .iter()
        .map(|&s| FilterChannel::new(s, est0, init.psi, cfg.ekf, cfg.slip_threshold))
        .collect::<Result<Vec<_>>>()?;
    let mut controller = DriftController::new(cfg.task, cfg.sideslip_gains, cfg.circle_gains)?;
    let fit = FitSettings {
        window: cfg.radius.window,
        lambda: cfg.radius.lambda,
        ..Default::default()
    };
    let mut window = PointWindow::new(cfg.radius.window);

    let period = cfg.control_period();
    let n_ticks = (cfg.duration / period).floor() as usize;
    let mut inputs = CommandRow {
        t: 0.0,
        delta: cfg.sideslip_gains.ff,
        omega: cfg.circle_gains.ff,
        r_ref: cfg.task.r0,
        r_fit: cfg.task.r0,
    };
    let mut truth = Vec::with_capacity(schedule.len() + n_ticks + 1);
    let mut measurements = Vec::with_capacity(schedule.len());
    let mut commands = Vec::with_capacity(n_ticks + 1);
    let mut imu_readings = 0;
    let mut anchor_dropouts = 0;
    let noise = cfg.ekf.noise;

    let mut next_sensor = 0;
    let mut tick = 0;
    loop {
        let t_tick = tick as f64 * period;
        let (t, event) = match (schedule.get(next_sensor), tick <= n_ticks) {
            (Some(&(ts, s)), true) if ts <= t_tick => (ts, Event::Sensor(s)),
            (_, true) => (t_tick, Event::Control),
            (Some(&(ts, s)), false) => (ts, Event::Sensor(s)),
            (None, false) => break,
        };
        let state = *plant.advance_to(t, &inputs.command());
        truth.push(TruthRow::new(&state, &inputs.command()));
        let pose = state.pose();

        match event {
            Event::Sensor(sensor) => {
                next_sensor += 1;
                let m = match sensor {
                    Sensor::Zed => {
                        let raw = suite.zed_measure(t, &pose);
                        let yaw = body_yaw(suite.heading_reading(&pose));
                        let p = zed_to_ground(crate::Vec2::new(raw.value[0], raw.value[1]), zed_yaw0, yaw, &cfg.sensors.zed_mount)?;
                        Some(noise.measurement(t, Sensor::Zed, [p.x, p.y]))
                    }
                    Sensor::D435i => match suite.anchor_observe(&pose) {
                        Some(obs) => {
                            let yaw = body_yaw(suite.heading_reading(&pose));
                            let p = anchor_localize(&obs, &cfg.anchor, yaw)?;
                            Some(noise.measurement(t, Sensor::D435i, [p.x, p.y]))
                        }
                        None => {
                            anchor_dropouts += 1;
                            None
                        }
                    },
                    Sensor::Imu => suite
                        .imu_measure(t, &pose, &state.velocity())
                        .map(|m| noise.measurement(t, Sensor::Imu, m.value)),
                };
                let Some(m) = m else { continue };
                if m.sensor == Sensor::Imu {
                    imu_readings += 1;
                }
                for ch in channels.iter_mut() {
                    if ch.consume(&m, &inputs)? {
                        let error = (ch.estimate().position() - state.position()).norm();
                        if !(error <= cfg.divergence_limit) {
                            return Err(Error::Diverged { t, error });
                        }
                    }
                }
                measurements.push(m);
            }
            Event::Control => {
                tick += 1;
                let (est, beta_hat) = match cfg.source {
                    Source::Truth => (truth_estimate(&state), state.beta),
                    src => {
                        let ch = channels.iter().find(|c| c.source == src).expect("filter for every source");
                        (ch.predicted(t, &inputs)?, ch.beta_hat())
                    }
                };
                if (tick - 1) % cfg.radius.decimation == 0 {
                    window.push(est.position());
                }
                let mut r_fit = inputs.r_fit;
                if window.is_full() {
                    if let Ok(f) = fit.fit(&window.to_vec()) {
                        r_fit = f.r;
                    }
                } else {
                    r_fit = inputs.r_ref;
                }
                let step = controller.step(&est, beta_hat, r_fit, period)?;
                inputs = CommandRow {
                    t,
                    delta: step.command.delta,
                    omega: step.command.omega,
                    r_ref: step.r_ref,
                    r_fit,
                };
                commands.push(inputs);
            }
        }
    }

    let window_m = cfg.metrics_window();
    let tracking = compute_metrics(&truth, None, &cfg.task, window_m)?;
    let laps_total = lap_count(&truth, TimeWindow::ALL);
    let mut estimators = Vec::new();
    let mut estimates = Vec::new();
    for ch in channels {
        let metrics = compute_metrics(&truth, Some(ch.log()), &cfg.task, window_m)?;
        estimators.push(SourceReport {
            source: ch.source,
            consumed: ch.consumed(),
            metrics,
        });
        estimates.push((ch.source, ch.into_log()));
    }
    let position_fixes = measurements.len() - imu_readings;
    Ok(RunOutput {
        truth,
        measurements,
        estimates,
        commands,
        report: ExperimentReport {
            source: cfg.source,
            seed: cfg.seed,
            duration: cfg.duration,
            metrics_from: cfg.metrics_from,
            laps_total,
            tracking,
            estimators,
            position_fixes,
            imu_readings,
            anchor_dropouts,
        },
    })
}
