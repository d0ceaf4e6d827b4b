//! Modular adaptive sliding-mode controller.
//!
//! The vehicle-manipulator system is controlled as three independent
//! subsystems — vehicle position, vehicle attitude, manipulator joints —
//! each with its own nominal inertia `M_bar`, error dynamics, sliding
//! variable, robust term, and adaptive gain estimator. No subsystem uses
//! another's model; the coupling forces between them are treated as the
//! unknown bounded-growth uncertainty that each subsystem's adaptive
//! magnitude `rho` learns to dominate. That is the modularity property:
//! retuning one subsystem cannot change what the others compute from the
//! same measurements.
//!
//! The only quantities shared between subsystems are measurements, not
//! models: the norm of the full stacked tracking error and the norm of the
//! last realized acceleration, which parameterize each `rho` because the
//! coupling forces grow with the whole system's state, not just the local
//! one.
//!
//! Underactuation is handled the standard way for multirotors: the position
//! subsystem outputs a desired world force, which is factored into a
//! collective thrust along the current body z-axis plus a roll/pitch
//! setpoint at the mission yaw. The attitude subsystem tracks that
//! setpoint. The setpoint computed at one tick is tracked from the next
//! tick on (one-period transport delay), and its rates come from
//! first-order differences smoothed by a low-pass filter, as on flight
//! hardware where the attitude reference is a sampled signal with no
//! analytic derivative.
//!
//! Optionally (default on) the command adds a gravity trim: the nominal
//! model's gravity vector at the desired pose, including the currently
//! scheduled payload. This is static model knowledge every flight stack
//! has (hover throttle, arm gravity compensation); everything dynamic —
//! Coriolis, inertial coupling, disturbances, trim error away from the
//! desired pose — is still left to the adaptive layer.

use nalgebra::{DVector, Vector3};

use crate::control::{attitude_error, thrust_attitude_setpoint, SubsystemController, TrackingError};
use crate::dynamics::{gravity_vector, rotation_matrix, GeneralizedCoords, PayloadEvent, SystemState, UamParams};
use crate::gains::{AdaptationParams, AdaptiveGains};
use crate::sim::{
    ActuationMode, ControlOutput, ControlTelemetry, Controller, ControllerOptions,
    SubsystemTelemetry,
};
use crate::trajectory::Mission;
use crate::{Result, SimError};

/// One subsystem of the modular controller: fixed structure, adaptation
/// coefficients, and the initial gain estimates.
#[derive(Debug, Clone)]
pub struct SubsystemSetup {
    pub controller: SubsystemController,
    pub adaptation: AdaptationParams,
    pub initial_gains: AdaptiveGains,
}

impl SubsystemSetup {
    pub fn new(
        controller: SubsystemController,
        adaptation: AdaptationParams,
        initial_gains: AdaptiveGains,
    ) -> Result<Self> {
        if adaptation.varpi != controller.varpi {
            return Err(SimError::InvalidParameter(format!(
                "adaptation boundary layer {} differs from the controller's {}",
                adaptation.varpi, controller.varpi
            )));
        }
        if !(adaptation.epsilon > 0.0) {
            return Err(SimError::InvalidParameter(
                "adaptation epsilon must be positive".into(),
            ));
        }
        if adaptation.nu.iter().any(|&nu| nu < 0.0) {
            return Err(SimError::InvalidParameter(
                "leakage rates must be non-negative".into(),
            ));
        }
        if !initial_gains.bounds_ok() {
            return Err(SimError::InvalidParameter(
                "initial gains outside the admissible set".into(),
            ));
        }
        Ok(Self {
            controller,
            adaptation,
            initial_gains,
        })
    }
}

struct Subsystem {
    ctl: SubsystemController,
    adaptation: AdaptationParams,
    gains: AdaptiveGains,
}

impl Subsystem {
    fn from_setup(s: SubsystemSetup) -> Self {
        Self {
            ctl: s.controller,
            adaptation: s.adaptation,
            gains: s.initial_gains,
        }
    }
}

/// The modular adaptive sliding-mode controller.
pub struct ModularAsmc {
    position: Subsystem,
    attitude: Subsystem,
    arm: Subsystem,
    mission: Mission,
    /// Nominal physical model used only for the gravity trim; tracks
    /// scheduled payload changes.
    nominal: UamParams,
    options: ControllerOptions,
    control_period: f64,
    /// Attitude setpoint tracked at the current tick (computed last tick).
    q_ref: Vector3<f64>,
    q_ref_dot: Vector3<f64>,
    /// Low-pass blend factor for the reference-rate estimates.
    filter_beta: f64,
}

impl ModularAsmc {
    pub fn new(
        position: SubsystemSetup,
        attitude: SubsystemSetup,
        arm: SubsystemSetup,
        mission: Mission,
        nominal: UamParams,
        control_period: f64,
        options: ControllerOptions,
    ) -> Result<Self> {
        nominal.validate()?;
        mission.validate()?;
        let n = nominal.arm_dof();
        if mission.arm_dof() != n {
            return Err(SimError::DimensionMismatch(format!(
                "mission targets {} joints, model has {}",
                mission.arm_dof(),
                n
            )));
        }
        for (setup, want, label) in [
            (&position, 3usize, "position"),
            (&attitude, 3, "attitude"),
            (&arm, n, "arm"),
        ] {
            if setup.controller.dim() != want {
                return Err(SimError::DimensionMismatch(format!(
                    "{label} subsystem must have dimension {want}, got {}",
                    setup.controller.dim()
                )));
            }
        }
        if !(control_period > 0.0) {
            return Err(SimError::InvalidParameter(
                "control period must be positive".into(),
            ));
        }
        if !(options.reference_filter_hz > 0.0) {
            return Err(SimError::InvalidParameter(
                "reference filter cutoff must be positive".into(),
            ));
        }
        let tau_f = 1.0 / (2.0 * std::f64::consts::PI * options.reference_filter_hz);
        let filter_beta = control_period / (control_period + tau_f);
        let yaw0 = mission.eval(0.0)?.yaw;
        Ok(Self {
            position: Subsystem::from_setup(position),
            attitude: Subsystem::from_setup(attitude),
            arm: Subsystem::from_setup(arm),
            mission,
            nominal,
            options,
            control_period,
            q_ref: Vector3::new(0.0, 0.0, yaw0),
            q_ref_dot: Vector3::zeros(),
            filter_beta,
        })
    }

    /// Current gain estimates as (position, attitude, arm).
    pub fn gain_state(&self) -> (AdaptiveGains, AdaptiveGains, AdaptiveGains) {
        (
            self.position.gains,
            self.attitude.gains,
            self.arm.gains,
        )
    }
}

impl Controller for ModularAsmc {
    fn name(&self) -> &'static str {
        "proposed"
    }

    fn dim(&self) -> usize {
        6 + self.nominal.arm_dof()
    }

    fn compute(&mut self, t: f64, state: &SystemState) -> Result<ControlOutput> {
        let n = self.nominal.arm_dof();
        let dim = 6 + n;
        let des = self.mission.eval(t)?;
        let q = state.coords.q;
        let q_dot: Vector3<f64> = state.chi_dot.fixed_rows::<3>(3).into();

        // Tracking errors. The attitude reference is the setpoint produced
        // at the previous tick (initialized level at the mission yaw).
        let e_p = DVector::from_column_slice((state.coords.p - des.p).as_slice());
        let ed_p = DVector::from_column_slice(
            (Vector3::from(state.chi_dot.fixed_rows::<3>(0)) - des.p_dot).as_slice(),
        );
        let err_p = TrackingError::new(e_p, ed_p);

        let (e_q3, ed_q3) = attitude_error(&q, &self.q_ref, &q_dot, &self.q_ref_dot)?;
        let err_q = TrackingError::new(
            DVector::from_column_slice(e_q3.as_slice()),
            DVector::from_column_slice(ed_q3.as_slice()),
        );

        let alpha = state.coords.alpha.clone();
        let alpha_dot = state.chi_dot.rows(6, n).into_owned();
        let err_a = TrackingError::new(&alpha - &des.alpha, alpha_dot - &des.alpha_dot);

        // Shared measurement norms: full stacked error and last realized
        // acceleration, the latter clipped to the measurement range.
        let xi_norm = (err_p.stacked().norm_squared()
            + err_q.stacked().norm_squared()
            + err_a.stacked().norm_squared())
        .sqrt();
        let acc_norm = state.chi_ddot_prev.norm().min(self.options.acc_norm_cap);

        // Sliding variables and robust terms.
        let r_p = self.position.ctl.sliding_variable(&err_p);
        let r_q = self.attitude.ctl.sliding_variable(&err_q);
        let r_a = self.arm.ctl.sliding_variable(&err_a);
        let (rho_p, rho_q, rho_a, delta_p, delta_q, delta_a);
        if self.options.robust_enabled {
            rho_p = self.position.gains.rho(xi_norm, acc_norm);
            rho_q = self.attitude.gains.rho(xi_norm, acc_norm);
            rho_a = self.arm.gains.rho(xi_norm, acc_norm);
            delta_p = self.position.ctl.robust_term(&r_p, rho_p);
            delta_q = self.attitude.ctl.robust_term(&r_q, rho_q);
            delta_a = self.arm.ctl.robust_term(&r_a, rho_a);
        } else {
            (rho_p, rho_q, rho_a) = (0.0, 0.0, 0.0);
            delta_p = DVector::zeros(3);
            delta_q = DVector::zeros(3);
            delta_a = DVector::zeros(n);
        }

        // Static gravity trim at the desired pose of the nominal model.
        let trim = if self.options.gravity_trim {
            let desired_pose = GeneralizedCoords::new(
                des.p,
                Vector3::new(0.0, 0.0, des.yaw),
                des.alpha.clone(),
            );
            gravity_vector(&desired_pose, &self.nominal)?
        } else {
            DVector::zeros(dim)
        };

        // Subsystem torque commands.
        let f_world = self.position.ctl.torque(
            &err_p,
            &DVector::from_column_slice(des.p_ddot.as_slice()),
            &delta_p,
        ) + trim.rows(0, 3);
        // No acceleration feedforward for the attitude: the setpoint comes
        // from thrust extraction, and differentiating it twice at the
        // control rate amplifies tick-to-tick jitter into torque. Its true
        // value is bounded, so it folds into the uncertainty the robust
        // term already covers.
        let tau_q = self
            .attitude
            .ctl
            .torque(&err_q, &DVector::zeros(3), &delta_q)
            + trim.rows(3, 3);
        let tau_a = self.arm.ctl.torque(&err_a, &des.alpha_ddot, &delta_a) + trim.rows(6, n);

        // Realize the translational command and derive the next attitude
        // setpoint.
        let f_vec = Vector3::new(f_world[0], f_world[1], f_world[2]);
        let (applied_f, thrust, q_setpoint_next) = match self.options.actuation {
            ActuationMode::Underactuated => {
                let (u1, q_d) = thrust_attitude_setpoint(&f_vec, des.yaw)?;
                let body_z = rotation_matrix(&q)? * Vector3::new(0.0, 0.0, u1);
                (body_z, u1, q_d)
            }
            ActuationMode::FullyActuated => (f_vec, f_vec.norm(), Vector3::new(0.0, 0.0, des.yaw)),
        };

        let mut tau = DVector::zeros(dim);
        tau.fixed_rows_mut::<3>(0)
            .copy_from_slice(applied_f.as_slice());
        tau.fixed_rows_mut::<3>(3).copy_from(&tau_q);
        tau.rows_mut(6, n).copy_from(&tau_a);

        // Telemetry reflects the references used THIS tick.
        let mut desired_chi = DVector::zeros(dim);
        desired_chi.fixed_rows_mut::<3>(0).copy_from(&des.p);
        desired_chi.fixed_rows_mut::<3>(3).copy_from(&self.q_ref);
        desired_chi.rows_mut(6, n).copy_from(&des.alpha);
        let mut desired_rate = DVector::zeros(dim);
        desired_rate.fixed_rows_mut::<3>(0).copy_from(&des.p_dot);
        desired_rate
            .fixed_rows_mut::<3>(3)
            .copy_from(&self.q_ref_dot);
        desired_rate.rows_mut(6, n).copy_from(&des.alpha_dot);
        let mut error = DVector::zeros(dim);
        error.rows_mut(0, 3).copy_from(&err_p.e);
        error.rows_mut(3, 3).copy_from(&err_q.e);
        error.rows_mut(6, n).copy_from(&err_a.e);

        let telemetry = ControlTelemetry {
            desired_chi,
            desired_rate,
            error,
            subsystems: vec![
                SubsystemTelemetry {
                    name: "pos",
                    r: r_p.clone(),
                    gains: self.position.gains,
                    rho: rho_p,
                },
                SubsystemTelemetry {
                    name: "att",
                    r: r_q.clone(),
                    gains: self.attitude.gains,
                    rho: rho_q,
                },
                SubsystemTelemetry {
                    name: "arm",
                    r: r_a.clone(),
                    gains: self.arm.gains,
                    rho: rho_a,
                },
            ],
            thrust,
        };

        // Adapt the gains for the next tick.
        if self.options.robust_enabled {
            let dt = self.control_period;
            self.position
                .gains
                .step(dt, r_p.norm(), xi_norm, acc_norm, &self.position.adaptation);
            self.attitude
                .gains
                .step(dt, r_q.norm(), xi_norm, acc_norm, &self.attitude.adaptation);
            self.arm
                .gains
                .step(dt, r_a.norm(), xi_norm, acc_norm, &self.arm.adaptation);
        }

        // Advance the attitude-reference state: transport the new setpoint
        // and refresh the filtered finite-difference rate.
        let dt = self.control_period;
        let raw_rate = (q_setpoint_next - self.q_ref) / dt;
        self.q_ref_dot += (raw_rate - self.q_ref_dot) * self.filter_beta;
        self.q_ref = q_setpoint_next;

        Ok(ControlOutput { tau, telemetry })
    }

    fn notify_payload(&mut self, event: &PayloadEvent) -> Result<()> {
        event.apply(&mut self.nominal)
    }
}
