//! Closed-loop simulation engine.
//!
//! The engine advances the plant with classical Runge-Kutta (RK4) at a fixed
//! physics step while the controller runs slower under zero-order hold: its
//! output is computed at the control period and held constant across the
//! physics steps in between, exactly like a discrete flight controller
//! driving a continuous vehicle.
//!
//! Acceleration feedback is honest: the controller never sees the current
//! acceleration (which would require knowing its own output), only
//! `chi_ddot_prev`, the acceleration realized over the previous physics
//! step.
//!
//! Payload events apply instantaneously between steps, to both the plant
//! and the controller's nominal model — the vehicle knows what it just
//! picked up, it just never knows the coupled dynamics.
//!
//! Runs end in one of two recorded outcomes: `Completed`, or `Diverged`
//! when the state leaves the valid envelope (speed above the ceiling,
//! non-finite values, pitch at the attitude singularity, or a thrust
//! demand pointing downward). Divergence is a reportable result, not a
//! programming error; genuine misuse (dimension mismatches, bad
//! configuration) still surfaces as `Err`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    forward_dynamics, DisturbanceProfile, GeneralizedCoords, PayloadEvent, SystemState, UamParams,
};
use crate::gains::AdaptiveGains;
use crate::{Result, SimError};

/// How the translational command reaches the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ActuationMode {
    /// Flight configuration: the translational command is converted to a
    /// collective thrust along the current body z-axis plus an attitude
    /// setpoint; lateral force only arises by tilting.
    Underactuated,
    /// Verification configuration: the translational command is applied
    /// directly as a world-frame force and the attitude setpoint comes
    /// straight from the mission yaw. Only meaningful on test plants.
    FullyActuated,
}

/// Behavioral switches shared by the controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOptions {
    /// Add the gravity vector of the nominal model at the desired pose to
    /// the command (static weight, arm torque, and attitude moment).
    pub gravity_trim: bool,
    pub actuation: ActuationMode,
    /// Disable to remove the robust term and freeze adaptation, leaving the
    /// pure linear error dynamics (used by the linear-limit verification).
    pub robust_enabled: bool,
    /// First-order low-pass cutoff for the numerically differentiated
    /// attitude-reference rates, Hz.
    pub reference_filter_hz: f64,
    /// Saturation applied to the measured acceleration norm before it
    /// enters the adaptive magnitude. Models the finite range of the
    /// acceleration measurement; without it, the acceleration-proportional
    /// gain term closes an algebraic loop through the plant (torque raises
    /// acceleration raises the gain raises torque) that can run away within
    /// a few control periods once tracking errors get large.
    pub acc_norm_cap: f64,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self {
            gravity_trim: true,
            actuation: ActuationMode::Underactuated,
            robust_enabled: true,
            reference_filter_hz: 20.0,
            acc_norm_cap: 25.0,
        }
    }
}

/// Per-subsystem telemetry for one control tick.
#[derive(Debug, Clone)]
pub struct SubsystemTelemetry {
    pub name: &'static str,
    pub r: DVector<f64>,
    pub gains: AdaptiveGains,
    pub rho: f64,
}

/// Everything a controller reports alongside its output.
#[derive(Debug, Clone)]
pub struct ControlTelemetry {
    /// Reference in coordinate layout [p_d; q_d; alpha_d]; the attitude
    /// entries are the setpoint actually tracked this tick.
    pub desired_chi: DVector<f64>,
    /// Reference rates, same layout.
    pub desired_rate: DVector<f64>,
    /// Stacked tracking error as the controller defines it (the attitude
    /// block uses the rotation-matrix error, not a plain angle difference).
    pub error: DVector<f64>,
    pub subsystems: Vec<SubsystemTelemetry>,
    /// Collective thrust magnitude, N.
    pub thrust: f64,
}

/// Controller output for one tick.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    /// Generalized force applied to the plant, coordinate layout.
    pub tau: DVector<f64>,
    pub telemetry: ControlTelemetry,
}

/// A feedback controller driving the generalized-force input.
pub trait Controller {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// Command for the interval starting at t, given the measured state.
    fn compute(&mut self, t: f64, state: &SystemState) -> Result<ControlOutput>;
    /// The vehicle is told about payload changes (mass only, no dynamics).
    fn notify_payload(&mut self, event: &PayloadEvent) -> Result<()>;
}

/// Anything the engine can integrate.
pub trait Plant {
    fn dim(&self) -> usize;
    /// Generalized acceleration under the applied force at time t.
    fn acceleration(&self, state: &SystemState, tau: &DVector<f64>, t: f64)
        -> Result<DVector<f64>>;
    fn apply_payload(&mut self, event: &PayloadEvent) -> Result<()>;
}

/// The full coupled vehicle-manipulator model with an exogenous disturbance.
pub struct UamPlant {
    pub params: UamParams,
    pub disturbance: DisturbanceProfile,
}

impl UamPlant {
    pub fn new(params: UamParams, disturbance: DisturbanceProfile) -> Result<Self> {
        params.validate()?;
        if disturbance.amplitude.len() != params.dim() {
            return Err(SimError::DimensionMismatch(format!(
                "disturbance amplitude has {} entries, model has {} coordinates",
                disturbance.amplitude.len(),
                params.dim()
            )));
        }
        Ok(Self {
            params,
            disturbance,
        })
    }
}

impl Plant for UamPlant {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn acceleration(
        &self,
        state: &SystemState,
        tau: &DVector<f64>,
        t: f64,
    ) -> Result<DVector<f64>> {
        let d = self.disturbance.eval(t);
        forward_dynamics(state, tau, &d, &self.params)
    }

    fn apply_payload(&mut self, event: &PayloadEvent) -> Result<()> {
        event.apply(&mut self.params)
    }
}

/// Decoupled constant-inertia plant `M chi_dd = tau` with no Coriolis,
/// gravity, or disturbance terms — the regime where the closed loop must
/// reduce exactly to its linear error dynamics.
pub struct LinearPlant {
    dim: usize,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl LinearPlant {
    pub fn new(mass: DMatrix<f64>) -> Result<Self> {
        let dim = mass.nrows();
        if mass.ncols() != dim {
            return Err(SimError::DimensionMismatch("mass matrix must be square".into()));
        }
        let factor = nalgebra::Cholesky::new(mass).ok_or_else(|| {
            SimError::InvalidParameter("linear plant mass matrix is not positive definite".into())
        })?;
        Ok(Self { dim, factor })
    }
}

impl Plant for LinearPlant {
    fn dim(&self) -> usize {
        self.dim
    }

    fn acceleration(
        &self,
        _state: &SystemState,
        tau: &DVector<f64>,
        _t: f64,
    ) -> Result<DVector<f64>> {
        Ok(self.factor.solve(tau))
    }

    fn apply_payload(&mut self, _event: &PayloadEvent) -> Result<()> {
        Ok(())
    }
}

/// Integration and recording settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Physics step, s.
    pub dt_physics: f64,
    /// Control period, s; must be an integer multiple of the physics step.
    pub control_period: f64,
    /// Generalized speed above which the run is declared diverged.
    pub divergence_speed: f64,
    /// Record every k-th control tick.
    pub record_every: usize,
}

impl Default for SimConfig {
    /// 1 kHz physics, 500 Hz control, recording at 100 Hz.
    fn default() -> Self {
        Self {
            dt_physics: 1e-3,
            control_period: 2e-3,
            divergence_speed: 50.0,
            record_every: 5,
        }
    }
}

impl SimConfig {
    /// Physics steps per control tick.
    pub fn control_ratio(&self) -> usize {
        (self.control_period / self.dt_physics).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_physics > 0.0) || !(self.control_period > 0.0) {
            return Err(SimError::Config("step sizes must be positive".into()));
        }
        let ratio = self.control_period / self.dt_physics;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(SimError::Config(format!(
                "control period {} is not an integer multiple of the physics step {}",
                self.control_period, self.dt_physics
            )));
        }
        if !(self.divergence_speed > 0.0) {
            return Err(SimError::Config("divergence speed must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(SimError::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Final status of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Diverged { t: f64, reason: String },
}

impl RunOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunOutcome::Completed)
    }
}

/// Gain telemetry for one subsystem at one tick.
#[derive(Debug, Clone)]
pub struct GainRecord {
    pub name: &'static str,
    pub gains: AdaptiveGains,
    pub rho: f64,
}

/// One recorded control tick.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub t: f64,
    pub chi: DVector<f64>,
    pub chi_dot: DVector<f64>,
    pub desired_chi: DVector<f64>,
    pub desired_rate: DVector<f64>,
    pub error: DVector<f64>,
    /// Concatenated sliding variables of all subsystems.
    pub sliding: DVector<f64>,
    pub gains: Vec<GainRecord>,
    pub tau: DVector<f64>,
    pub thrust: f64,
}

/// A completed (or diverged) run.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub controller: String,
    pub arm_dof: usize,
    pub records: Vec<TraceRecord>,
    pub outcome: RunOutcome,
    pub duration: f64,
}

/// Run the closed loop from `initial` for `duration` seconds.
pub fn run(
    plant: &mut dyn Plant,
    controller: &mut dyn Controller,
    initial: SystemState,
    duration: f64,
    events: &[PayloadEvent],
    cfg: &SimConfig,
) -> Result<SimTrace> {
    cfg.validate()?;
    let dim = plant.dim();
    if controller.dim() != dim || initial.dim() != dim {
        return Err(SimError::DimensionMismatch(format!(
            "plant has {} coordinates, controller {}, initial state {}",
            dim,
            controller.dim(),
            initial.dim()
        )));
    }
    if !(duration > 0.0) {
        return Err(SimError::Config("duration must be positive".into()));
    }

    let dt = cfg.dt_physics;
    let ratio = cfg.control_ratio();
    let steps = (duration / dt).round() as usize;
    let mut state = initial;
    state.t = 0.0;
    let mut tau = DVector::zeros(dim);
    let mut records = Vec::with_capacity(steps / (ratio * cfg.record_every) + 1);
    let mut outcome = RunOutcome::Completed;
    let mut event_idx = 0usize;
    let mut control_tick = 0usize;

    'main: for step in 0..steps {
        let t = step as f64 * dt;
        state.t = t;

        while event_idx < events.len() && events[event_idx].time <= t + 0.5 * dt {
            plant.apply_payload(&events[event_idx])?;
            controller.notify_payload(&events[event_idx])?;
            event_idx += 1;
        }

        if step % ratio == 0 {
            let out = match controller.compute(t, &state) {
                Ok(out) => out,
                Err(SimError::NonPositiveThrust { fz }) => {
                    outcome = RunOutcome::Diverged {
                        t,
                        reason: format!("thrust demand points down (f_z = {fz:.3})"),
                    };
                    break 'main;
                }
                Err(SimError::AttitudeSingularity { pitch, .. }) => {
                    outcome = RunOutcome::Diverged {
                        t,
                        reason: format!("pitch {pitch:.3} rad reached the attitude singularity"),
                    };
                    break 'main;
                }
                Err(e) => return Err(e),
            };
            for sub in &out.telemetry.subsystems {
                if !sub.gains.bounds_ok() {
                    return Err(SimError::InvalidParameter(format!(
                        "adaptive gains of subsystem '{}' left the admissible set at t = {t}",
                        sub.name
                    )));
                }
            }
            if !out.tau.iter().all(|v| v.is_finite()) {
                outcome = RunOutcome::Diverged {
                    t,
                    reason: "controller output is not finite".into(),
                };
                break 'main;
            }
            tau = out.tau;
            if control_tick % cfg.record_every == 0 {
                let tel = out.telemetry;
                records.push(TraceRecord {
                    t,
                    chi: state.coords.to_vector(),
                    chi_dot: state.chi_dot.clone(),
                    desired_chi: tel.desired_chi,
                    desired_rate: tel.desired_rate,
                    error: tel.error,
                    sliding: {
                        let total: usize = tel.subsystems.iter().map(|s| s.r.len()).sum();
                        let mut r = DVector::zeros(total);
                        let mut at = 0;
                        for s in &tel.subsystems {
                            r.rows_mut(at, s.r.len()).copy_from(&s.r);
                            at += s.r.len();
                        }
                        r
                    },
                    gains: tel
                        .subsystems
                        .iter()
                        .map(|s| GainRecord {
                            name: s.name,
                            gains: s.gains,
                            rho: s.rho,
                        })
                        .collect(),
                    tau: tau.clone(),
                    thrust: tel.thrust,
                });
            }
            control_tick += 1;
        }

        // RK4 over [t, t + dt] with the held command.
        let chi = state.coords.to_vector();
        let v = state.chi_dot.clone();
        let eval = |chi: &DVector<f64>, v: &DVector<f64>, ts: f64| -> Result<DVector<f64>> {
            let s = SystemState {
                coords: GeneralizedCoords::from_vector(chi)?,
                chi_dot: v.clone(),
                chi_ddot_prev: DVector::zeros(chi.len()),
                t: ts,
            };
            plant.acceleration(&s, &tau, ts)
        };
        let stages = (|| -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
            let k1v = eval(&chi, &v, t)?;
            let k1x = v.clone();
            let k2x = &v + &k1v * (dt / 2.0);
            let k2v = eval(&(&chi + &k1x * (dt / 2.0)), &k2x, t + dt / 2.0)?;
            let k3x = &v + &k2v * (dt / 2.0);
            let k3v = eval(&(&chi + &k2x * (dt / 2.0)), &k3x, t + dt / 2.0)?;
            let k4x = &v + &k3v * dt;
            let k4v = eval(&(&chi + &k3x * dt), &k4x, t + dt)?;
            let chi_new = &chi + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
            let v_new = &v + (&k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
            Ok((chi_new, v_new, k1v))
        })();
        let (chi_new, v_new, acc_start) = match stages {
            Ok(s) => s,
            Err(SimError::AttitudeSingularity { pitch, .. }) => {
                outcome = RunOutcome::Diverged {
                    t,
                    reason: format!("pitch {pitch:.3} rad reached the attitude singularity"),
                };
                break 'main;
            }
            Err(e) => return Err(e),
        };

        if !chi_new.iter().all(|x| x.is_finite()) || !v_new.iter().all(|x| x.is_finite()) {
            outcome = RunOutcome::Diverged {
                t: t + dt,
                reason: "state is not finite".into(),
            };
            break 'main;
        }
        if v_new.norm() > cfg.divergence_speed {
            outcome = RunOutcome::Diverged {
                t: t + dt,
                reason: format!(
                    "generalized speed {:.2} exceeded the ceiling {:.2}",
                    v_new.norm(),
                    cfg.divergence_speed
                ),
            };
            break 'main;
        }

        state.coords = GeneralizedCoords::from_vector(&chi_new)?;
        state.chi_dot = v_new;
        state.chi_ddot_prev = acc_start;
    }

    Ok(SimTrace {
        controller: controller.name().to_string(),
        arm_dof: dim - 6,
        records,
        outcome,
        duration,
    })
}

fn coordinate_names(n: usize) -> Vec<String> {
    let mut names = vec![
        "p_x".into(),
        "p_y".into(),
        "p_z".into(),
        "q_phi".into(),
        "q_theta".into(),
        "q_psi".into(),
    ];
    for i in 1..=n {
        names.push(format!("alpha_{i}"));
    }
    names
}

/// Write the trace as CSV. One row per recorded control tick; every float
/// uses exponential notation so output is deterministic byte for byte.
///
/// Columns: `t`; state `chi`; rates `d<name>`; reference `des_<name>`;
/// reference rates `des_d<name>`; controller error `e_<k>`; sliding
/// variables `r_<subsystem>_<k>`; per-subsystem gains
/// `<subsystem>_{k0,k1,k2,k3,zeta,rho}`; applied force `tau_<name>`; and
/// collective `thrust`.
pub fn write_trace_csv(trace: &SimTrace, w: &mut dyn Write) -> Result<()> {
    let n = trace.arm_dof;
    let coords = coordinate_names(n);
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(coords.iter().cloned());
    header.extend(coords.iter().map(|c| format!("d{c}")));
    header.extend(coords.iter().map(|c| format!("des_{c}")));
    header.extend(coords.iter().map(|c| format!("des_d{c}")));
    header.extend((1..=6 + n).map(|k| format!("e_{k}")));
    if let Some(first) = trace.records.first() {
        // Subsystem order in `sliding` matches `gains`.
        for g in &first.gains {
            let len = subsystem_r_len(first, g.name);
            for k in 1..=len {
                header.push(format!("r_{}_{k}", g.name));
            }
        }
        for g in &first.gains {
            for part in ["k0", "k1", "k2", "k3", "zeta", "rho"] {
                header.push(format!("{}_{part}", g.name));
            }
        }
    }
    header.extend(coords.iter().map(|c| format!("tau_{c}")));
    header.push("thrust".into());
    writeln!(w, "{}", header.join(","))?;

    let mut line = String::new();
    for rec in &trace.records {
        line.clear();
        push_num(&mut line, rec.t);
        for v in rec.chi.iter().chain(rec.chi_dot.iter()) {
            push_num(&mut line, *v);
        }
        for v in rec.desired_chi.iter().chain(rec.desired_rate.iter()) {
            push_num(&mut line, *v);
        }
        for v in rec.error.iter() {
            push_num(&mut line, *v);
        }
        for v in rec.sliding.iter() {
            push_num(&mut line, *v);
        }
        for g in &rec.gains {
            for v in [
                g.gains.k[0],
                g.gains.k[1],
                g.gains.k[2],
                g.gains.k[3],
                g.gains.zeta,
                g.rho,
            ] {
                push_num(&mut line, v);
            }
        }
        for v in rec.tau.iter() {
            push_num(&mut line, *v);
        }
        push_num(&mut line, rec.thrust);
        // Drop the leading comma.
        writeln!(w, "{}", &line[1..])?;
    }
    Ok(())
}

/// Length of the named subsystem's sliding variable in a record: the
/// sliding vector concatenates subsystems in `gains` order, and all
/// subsystems of a controller keep fixed sizes, so the split is
/// reconstructed from the record layout.
fn subsystem_r_len(rec: &TraceRecord, name: &str) -> usize {
    // Controllers in this crate use: one entry spanning everything, or the
    // (pos, att, arm) split. Reconstruct sizes from totals.
    let total = rec.sliding.len();
    match rec.gains.len() {
        1 => total,
        3 => match name {
            "pos" | "att" => 3,
            _ => total - 6,
        },
        _ => total / rec.gains.len().max(1),
    }
}

fn push_num(line: &mut String, v: f64) {
    line.push(',');
    line.push_str(&format!("{v:e}"));
}
