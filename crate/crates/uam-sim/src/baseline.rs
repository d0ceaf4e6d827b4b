//! Non-modular adaptive sliding-mode baseline.
//!
//! This controller treats the whole generalized state as ONE subsystem: a
//! single stacked tracking error of dimension 6 + n, a single sliding
//! variable from one Lyapunov solve, one robust magnitude `rho`, and one
//! set of adaptive gains for the entire vehicle. It uses the same nominal
//! knowledge as the modular design — a constant nominal inertia (the
//! diagonal of the true mass matrix at the mission start pose), the same
//! gravity trim, the same thrust factorization — so every difference in
//! closed-loop behavior comes from the monolithic adaptation, not from an
//! information handicap.
//!
//! The structural weaknesses this design exhibits, and which the modular
//! controller avoids:
//!
//! * one robust magnitude serves coordinates with torque scales three
//!   orders of magnitude apart, so arm-error transients inject
//!   position-scale robust action into the attitude and joint channels and
//!   vice versa;
//! * one boundary layer width must arbitrate between channels whose sliding
//!   variables live on different scales, so some channels chatter while
//!   others go soft;
//! * one leakage rate cannot match adaptation speed to each loop's
//!   bandwidth;
//! * retuning anything — even a joint-space weight — changes the global
//!   Lyapunov solution and therefore every command channel.

use nalgebra::{DVector, Vector3};

use crate::control::{attitude_error, thrust_attitude_setpoint, SubsystemController, TrackingError};
use crate::dynamics::{gravity_vector, rotation_matrix, GeneralizedCoords, PayloadEvent, SystemState, UamParams};
use crate::gains::{AdaptationParams, AdaptiveGains};
use crate::proposed::SubsystemSetup;
use crate::sim::{
    ActuationMode, ControlOutput, ControlTelemetry, Controller, ControllerOptions,
    SubsystemTelemetry,
};
use crate::trajectory::Mission;
use crate::{Result, SimError};

/// The monolithic adaptive sliding-mode controller.
pub struct CoupledAsmc {
    whole: SubsystemController,
    adaptation: AdaptationParams,
    gains: AdaptiveGains,
    mission: Mission,
    nominal: UamParams,
    options: ControllerOptions,
    control_period: f64,
    q_ref: Vector3<f64>,
    q_ref_dot: Vector3<f64>,
    filter_beta: f64,
}

impl CoupledAsmc {
    /// `setup` must span the full generalized state (dimension 6 + n).
    pub fn new(
        setup: SubsystemSetup,
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
        if setup.controller.dim() != 6 + n {
            return Err(SimError::DimensionMismatch(format!(
                "whole-vehicle subsystem must have dimension {}, got {}",
                6 + n,
                setup.controller.dim()
            )));
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
            whole: setup.controller,
            adaptation: setup.adaptation,
            gains: setup.initial_gains,
            mission,
            nominal,
            options,
            control_period,
            q_ref: Vector3::new(0.0, 0.0, yaw0),
            q_ref_dot: Vector3::zeros(),
            filter_beta,
        })
    }

    pub fn gain_state(&self) -> AdaptiveGains {
        self.gains
    }
}

impl Controller for CoupledAsmc {
    fn name(&self) -> &'static str {
        "baseline"
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

        // One stacked error across every coordinate.
        let (e_q3, ed_q3) = attitude_error(&q, &self.q_ref, &q_dot, &self.q_ref_dot)?;
        let mut e = DVector::zeros(dim);
        let mut e_dot = DVector::zeros(dim);
        e.fixed_rows_mut::<3>(0)
            .copy_from(&(state.coords.p - des.p));
        e.fixed_rows_mut::<3>(3).copy_from(&e_q3);
        e.rows_mut(6, n)
            .copy_from(&(&state.coords.alpha - &des.alpha));
        e_dot
            .fixed_rows_mut::<3>(0)
            .copy_from(&(Vector3::from(state.chi_dot.fixed_rows::<3>(0)) - des.p_dot));
        e_dot.fixed_rows_mut::<3>(3).copy_from(&ed_q3);
        e_dot
            .rows_mut(6, n)
            .copy_from(&(state.chi_dot.rows(6, n) - &des.alpha_dot));
        let err = TrackingError::new(e, e_dot);

        let xi_norm = err.stacked().norm();
        let acc_norm = state.chi_ddot_prev.norm().min(self.options.acc_norm_cap);

        // One sliding variable, one robust magnitude for everything.
        let r = self.whole.sliding_variable(&err);
        let rho = self.gains.rho(xi_norm, acc_norm);
        let delta = self.whole.robust_term(&r, rho);

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

        // The attitude block gets no acceleration feedforward: the setpoint
        // comes from thrust extraction, and twice-differentiated setpoints
        // amplify tick-to-tick jitter. The true value is bounded and folds
        // into the uncertainty the robust term covers.
        let mut x_dd_des = DVector::zeros(dim);
        x_dd_des.fixed_rows_mut::<3>(0).copy_from(&des.p_ddot);
        x_dd_des.rows_mut(6, n).copy_from(&des.alpha_ddot);
        let tau_full = self.whole.torque(&err, &x_dd_des, &delta) + trim;

        let f_vec = Vector3::new(tau_full[0], tau_full[1], tau_full[2]);
        let (applied_f, thrust, q_setpoint_next) = match self.options.actuation {
            ActuationMode::Underactuated => {
                let (u1, q_d) = thrust_attitude_setpoint(&f_vec, des.yaw)?;
                let body_z = rotation_matrix(&q)? * Vector3::new(0.0, 0.0, u1);
                (body_z, u1, q_d)
            }
            ActuationMode::FullyActuated => (f_vec, f_vec.norm(), Vector3::new(0.0, 0.0, des.yaw)),
        };

        let mut tau = tau_full.clone();
        tau.fixed_rows_mut::<3>(0)
            .copy_from_slice(applied_f.as_slice());

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

        let telemetry = ControlTelemetry {
            desired_chi,
            desired_rate,
            error: err.e.clone(),
            subsystems: vec![SubsystemTelemetry {
                name: "all",
                r: r.clone(),
                gains: self.gains,
                rho,
            }],
            thrust,
        };

        if self.options.robust_enabled {
            self.gains
                .step(self.control_period, r.norm(), xi_norm, acc_norm, &self.adaptation);
        }

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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::mass_matrix;
    use crate::trajectory::{pick_place_mission, PickPlaceConfig};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn whole_setup(scale_arm: f64) -> SubsystemSetup {
        let params = UamParams::default();
        let mission = pick_place_mission(&PickPlaceConfig::default());
        let coords0 = GeneralizedCoords::new(
            mission.waypoints[0].position,
            Vector3::zeros(),
            mission.waypoints[0].arm.clone(),
        );
        let m0 = mass_matrix(&coords0, &params).unwrap();
        let m_bar = DMatrix::from_diagonal(&m0.diagonal());
        let mut lambda2 = DVector::from_element(8, 1.0);
        lambda2[6] *= scale_arm;
        lambda2[7] *= scale_arm;
        let lambda2 = DMatrix::from_diagonal(&lambda2);
        let lambda1 = &lambda2 * 2.0;
        SubsystemSetup::new(
            SubsystemController::new(
                m_bar,
                lambda1,
                lambda2,
                DMatrix::identity(8, 8) * 2.0,
                DMatrix::identity(16, 16),
                0.1,
            )
            .unwrap(),
            AdaptationParams {
                nu: [10.0; 4],
                epsilon: 1e-4,
                varpi: 0.1,
            },
            AdaptiveGains::new([0.01; 4], 0.1),
        )
        .unwrap()
    }

    fn baseline(scale_arm: f64) -> CoupledAsmc {
        CoupledAsmc::new(
            whole_setup(scale_arm),
            pick_place_mission(&PickPlaceConfig::default()),
            UamParams::default(),
            2e-3,
            ControllerOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn hover_at_reference_commands_exact_weight() {
        let mut ctl = baseline(1.0);
        let mission = pick_place_mission(&PickPlaceConfig::default());
        let des = mission.eval(0.0).unwrap();
        let state = SystemState::at_rest(GeneralizedCoords::new(
            des.p,
            Vector3::zeros(),
            des.alpha.clone(),
        ));
        let out = ctl.compute(0.0, &state).unwrap();
        assert_relative_eq!(out.telemetry.thrust, 2.2 * 9.81, epsilon = 1e-9);
    }

    #[test]
    fn single_gain_set_reported() {
        let mut ctl = baseline(1.0);
        let state = SystemState::at_rest(GeneralizedCoords::new(
            Vector3::zeros(),
            Vector3::zeros(),
            DVector::from_vec(vec![0.0, std::f64::consts::FRAC_PI_2]),
        ));
        let out = ctl.compute(0.0, &state).unwrap();
        assert_eq!(out.telemetry.subsystems.len(), 1);
        assert_eq!(out.telemetry.subsystems[0].name, "all");
        assert_eq!(out.telemetry.subsystems[0].r.len(), 8);
    }

    #[test]
    fn arm_retune_bleeds_into_every_channel() {
        // The same joint-space retune that leaves the modular controller's
        // other subsystems bit-identical changes the baseline's position
        // command, because the global Lyapunov solution ties all channels
        // together.
        let run_with = |scale: f64| -> Vec<DVector<f64>> {
            let mut ctl = baseline(scale);
            let mission = pick_place_mission(&PickPlaceConfig::default());
            let mut outputs = Vec::new();
            for k in 0..200 {
                let t = k as f64 * 2e-3;
                let des = mission.eval(t).unwrap();
                let wob = |f: f64, a: f64| a * (2.0 * std::f64::consts::PI * f * t).sin();
                let coords = GeneralizedCoords::new(
                    des.p + Vector3::new(wob(0.7, 0.02), wob(0.9, 0.015), wob(1.1, 0.01)),
                    Vector3::new(wob(1.3, 0.02), wob(1.7, 0.02), wob(0.4, 0.01)),
                    &des.alpha + DVector::from_vec(vec![wob(0.6, 0.05), wob(0.8, 0.04)]),
                );
                let mut state = SystemState::at_rest(coords);
                state.chi_dot = DVector::from_fn(8, |i, _| wob(0.5 + 0.1 * i as f64, 0.05));
                state.chi_ddot_prev = DVector::from_fn(8, |i, _| wob(0.3 + 0.1 * i as f64, 0.2));
                state.t = t;
                outputs.push(ctl.compute(t, &state).unwrap().tau);
            }
            outputs
        };
        let base = run_with(1.0);
        let retuned = run_with(2.0);
        let changed = base
            .iter()
            .zip(retuned.iter())
            .any(|(a, b)| (0..6).any(|k| a[k].to_bits() != b[k].to_bits()));
        assert!(changed, "baseline position/attitude commands did not react to the arm retune");
    }
}
