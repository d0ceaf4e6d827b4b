//! Configuration schema, presets, and the glue that turns a configuration
//! into runnable plants and controllers.
//!
//! Everything a run needs lives in one JSON document: physical parameters,
//! mission, disturbance, integration settings, and the gain sets of both
//! controllers. Matrices are configured as diagonals — every tuning in
//! practice is diagonal, and it keeps the schema flat. Full matrices remain
//! available through the library API.
//!
//! The only randomness in the whole suite is the disturbance phase when it
//! is not pinned explicitly: it derives from the seed through a counter
//! RNG, so a (config, seed) pair reproduces a run byte for byte.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::CoupledAsmc;
use crate::control::SubsystemController;
use crate::dynamics::{
    mass_matrix, DisturbanceKind, DisturbanceProfile, GeneralizedCoords, SystemState, UamParams,
};
use crate::gains::{AdaptationParams, AdaptiveGains};
use crate::proposed::{ModularAsmc, SubsystemSetup};
use crate::sim::{self, ActuationMode, ControllerOptions, SimConfig, SimTrace, UamPlant};
use crate::trajectory::{pick_place_mission, Mission, PickPlaceConfig};
use crate::{Result, SimError};

/// Gain set of one subsystem (or of the whole vehicle for the baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSettings {
    /// Diagonal of the nominal inertia.
    pub m_bar: Vec<f64>,
    /// Diagonal of the stiffness-like error matrix.
    pub lambda1: Vec<f64>,
    /// Diagonal of the damping-like error matrix.
    pub lambda2: Vec<f64>,
    /// Diagonal of the feedback weight in the torque law.
    pub big_lambda: Vec<f64>,
    /// Diagonal of the Lyapunov right-hand side; identity when omitted.
    #[serde(default)]
    pub q_diag: Option<Vec<f64>>,
    /// Boundary-layer width of the robust term.
    pub varpi: f64,
    /// Leakage rate of all four adaptive estimates.
    pub nu: f64,
    /// Drive of the auxiliary floor dynamics.
    pub epsilon: f64,
    /// Initial adaptive gain estimates.
    pub k_init: [f64; 4],
    /// Initial auxiliary floor.
    pub zeta_init: f64,
}

impl SubsystemSettings {
    /// Build and validate the runtime subsystem.
    pub fn resolve(&self) -> Result<SubsystemSetup> {
        let d = self.m_bar.len();
        for (v, label) in [
            (&self.lambda1, "lambda1"),
            (&self.lambda2, "lambda2"),
            (&self.big_lambda, "big_lambda"),
        ] {
            if v.len() != d {
                return Err(SimError::Config(format!(
                    "{label} has {} entries, m_bar has {d}",
                    v.len()
                )));
            }
        }
        let q = match &self.q_diag {
            Some(q) => {
                if q.len() != 2 * d {
                    return Err(SimError::Config(format!(
                        "q_diag needs {} entries, got {}",
                        2 * d,
                        q.len()
                    )));
                }
                DMatrix::from_diagonal(&DVector::from_vec(q.clone()))
            }
            None => DMatrix::identity(2 * d, 2 * d),
        };
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let controller = SubsystemController::new(
            diag(&self.m_bar),
            diag(&self.lambda1),
            diag(&self.lambda2),
            diag(&self.big_lambda),
            q,
            self.varpi,
        )?;
        SubsystemSetup::new(
            controller,
            AdaptationParams {
                nu: [self.nu; 4],
                epsilon: self.epsilon,
                varpi: self.varpi,
            },
            AdaptiveGains::new(self.k_init, self.zeta_init),
        )
    }
}

/// Gain sets of the modular controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedSettings {
    pub position: SubsystemSettings,
    pub attitude: SubsystemSettings,
    pub arm: SubsystemSettings,
}

/// Gain set of the monolithic baseline. Identical schema to a subsystem,
/// except the nominal inertia may be omitted to derive it from the model:
/// the diagonal of the true mass matrix at the mission start pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSettings {
    #[serde(default)]
    pub m_bar: Option<Vec<f64>>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub big_lambda: Vec<f64>,
    #[serde(default)]
    pub q_diag: Option<Vec<f64>>,
    pub varpi: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub k_init: [f64; 4],
    pub zeta_init: f64,
}

impl BaselineSettings {
    fn resolve(&self, params: &UamParams, start: &GeneralizedCoords) -> Result<SubsystemSetup> {
        let m_bar = match &self.m_bar {
            Some(v) => v.clone(),
            None => {
                let m0 = mass_matrix(start, params)?;
                m0.diagonal().iter().copied().collect()
            }
        };
        let settings = SubsystemSettings {
            m_bar,
            lambda1: self.lambda1.clone(),
            lambda2: self.lambda2.clone(),
            big_lambda: self.big_lambda.clone(),
            q_diag: self.q_diag.clone(),
            varpi: self.varpi,
            nu: self.nu,
            epsilon: self.epsilon,
            k_init: self.k_init,
            zeta_init: self.zeta_init,
        };
        settings.resolve()
    }
}

/// Disturbance description; the phase is seeded when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSettings {
    pub kind: DisturbanceKind,
    pub amplitude: Vec<f64>,
    pub frequency_hz: f64,
    #[serde(default)]
    pub phase: Option<f64>,
}

impl DisturbanceSettings {
    fn resolve(&self, dim: usize, seed: u64) -> Result<DisturbanceProfile> {
        if self.amplitude.len() != dim {
            return Err(SimError::Config(format!(
                "disturbance amplitude has {} entries, model has {dim} coordinates",
                self.amplitude.len()
            )));
        }
        let phase = match self.phase {
            Some(p) => p,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.gen_range(0.0..2.0 * std::f64::consts::PI)
            }
        };
        Ok(DisturbanceProfile {
            kind: self.kind,
            amplitude: DVector::from_column_slice(&self.amplitude),
            frequency_hz: self.frequency_hz,
            phase,
        })
    }
}

/// Mission description: the scripted sortie or an explicit waypoint list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionSettings {
    PickPlace(PickPlaceConfig),
    Explicit(Mission),
}

impl MissionSettings {
    fn resolve(&self) -> Mission {
        match self {
            MissionSettings::PickPlace(cfg) => pick_place_mission(cfg),
            MissionSettings::Explicit(m) => m.clone(),
        }
    }
}

/// Controller-level switches exposed in the configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    /// Add the nominal gravity vector at the desired pose to the command.
    pub gravity_trim: bool,
    /// Low-pass cutoff for the attitude-reference rate estimates, Hz.
    pub reference_filter_hz: f64,
    /// Range limit of the acceleration-norm measurement used by the
    /// adaptive magnitude.
    pub acc_norm_cap: f64,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            gravity_trim: true,
            reference_filter_hz: 20.0,
            acc_norm_cap: 25.0,
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    /// Physical parameters as the controllers know them (nominal model).
    pub params: UamParams,
    /// True physical parameters of the simulated vehicle when they differ
    /// from the nominal model; `None` means the model is exact. Lets a run
    /// inject model error (heavier links, shifted mount) that the
    /// controllers must absorb as uncertainty.
    #[serde(default)]
    pub plant_params: Option<UamParams>,
    pub mission: MissionSettings,
    pub disturbance: DisturbanceSettings,
    pub sim: SimConfig,
    pub control: ControlSettings,
    pub proposed: ProposedSettings,
    pub baseline: BaselineSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self::desk_reference()
    }
}

impl AppConfig {
    /// Default tuning for the 2.2 kg bench vehicle.
    ///
    /// The per-channel loop stiffness is the product of nominal inertia and
    /// feedback weight; only that product shapes the linear error dynamics,
    /// so the split between the two factors is free. The split is chosen
    /// deliberately: inside the boundary layer the robust term acts as an
    /// extra feedback gain of (nominal inertia) * rho / (layer width), so
    /// small nominal inertias on the light, fast channels (attitude, arm)
    /// leave the adaptive magnitude plenty of room to grow before that
    /// implicit gain erodes the sampled-loop stability margin, while the
    /// heavy position channel keeps its physical inertia and gets strong
    /// disturbance rejection per unit rho.
    pub fn desk_reference() -> Self {
        let sub = |m_bar: Vec<f64>,
                   lambda2: Vec<f64>,
                   big_lambda: Vec<f64>,
                   varpi: f64,
                   nu: f64,
                   k_init: f64,
                   zeta_init: f64| {
            SubsystemSettings {
                lambda1: lambda2.iter().map(|x| 2.0 * x).collect(),
                m_bar,
                lambda2,
                big_lambda,
                q_diag: None,
                varpi,
                nu,
                epsilon: 1e-4,
                k_init: [k_init; 4],
                zeta_init,
            }
        };
        Self {
            params: UamParams::default(),
            plant_params: None,
            mission: MissionSettings::PickPlace(PickPlaceConfig::default()),
            disturbance: DisturbanceSettings {
                kind: DisturbanceKind::Composite,
                amplitude: vec![0.6, 0.6, 0.6, 0.03, 0.03, 0.03, 0.02, 0.02],
                frequency_hz: 0.5,
                phase: None,
            },
            sim: SimConfig::default(),
            control: ControlSettings::default(),
            proposed: ProposedSettings {
                position: sub(
                    vec![2.2, 2.2, 2.2],
                    vec![1.0, 1.0, 2.0],
                    vec![4.0, 4.0, 4.0],
                    0.1,
                    10.0,
                    0.01,
                    0.1,
                ),
                attitude: sub(
                    vec![0.06, 0.06, 0.02],
                    vec![2.0, 2.0, 2.0],
                    vec![20.0, 20.0, 20.0],
                    1.0,
                    20.0,
                    0.001,
                    0.01,
                ),
                arm: sub(
                    vec![0.04, 0.02],
                    vec![1.5, 1.5],
                    vec![20.0, 20.0],
                    0.3,
                    1.0,
                    1e-4,
                    0.01,
                ),
            },
            // The baseline's nominal inertia is the mass-matrix diagonal of
            // the stock vehicle at the tuning pose, pinned as numbers: a
            // tuned constant, not re-derived per run, so changing the
            // vehicle model later cannot silently retune this controller.
            // The feedback weights then reproduce the modular set's
            // per-channel stiffness (weight times nominal inertia), so the
            // comparison isolates the gain-sharing structure rather than
            // loop bandwidth choices.
            // The single boundary layer is sized for the hottest channel:
            // with the true attitude and arm inertias in the nominal block,
            // a layer as tight as the modular position one makes those
            // loops oscillate in hover, so the shared width backs off to
            // keep them stable — at the cost of softer position rejection.
            baseline: BaselineSettings {
                m_bar: Some(vec![
                    2.2,
                    2.2,
                    2.2,
                    0.045166666666666666,
                    0.04933333333333333,
                    0.044166666666666665,
                    0.020833333333333332,
                    0.004166666666666667,
                ]),
                lambda1: vec![2.0, 2.0, 4.0, 4.0, 4.0, 4.0, 3.0, 3.0],
                lambda2: vec![1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 1.5, 1.5],
                big_lambda: vec![4.0, 4.0, 4.0, 26.6, 24.3, 9.1, 38.4, 96.0],
                q_diag: None,
                varpi: 0.5,
                nu: 10.0,
                epsilon: 1e-4,
                k_init: [0.01; 4],
                zeta_init: 0.1,
            },
        }
    }

    /// Compact reference tuning: unit position inertia, small attitude and
    /// arm nominals, gentle feedback. Kept as a second full tuning to
    /// exercise the constructors across very differently scaled subsystems.
    pub fn reference_tuning() -> Self {
        let mut cfg = Self::desk_reference();
        cfg.proposed = ProposedSettings {
            position: SubsystemSettings {
                m_bar: vec![1.0, 1.0, 1.0],
                lambda1: vec![2.0, 2.0, 4.0],
                lambda2: vec![1.0, 1.0, 2.0],
                big_lambda: vec![1.5, 1.5, 2.0],
                q_diag: None,
                varpi: 0.1,
                nu: 10.0,
                epsilon: 1e-4,
                k_init: [0.01; 4],
                zeta_init: 0.1,
            },
            attitude: SubsystemSettings {
                m_bar: vec![0.015, 0.015, 0.015],
                lambda1: vec![4.0, 4.0, 4.0],
                lambda2: vec![2.0, 2.0, 2.0],
                big_lambda: vec![3.5, 3.5, 2.5],
                q_diag: None,
                varpi: 1.0,
                nu: 20.0,
                epsilon: 1e-4,
                k_init: [0.001; 4],
                zeta_init: 0.01,
            },
            arm: SubsystemSettings {
                m_bar: vec![0.1, 0.1],
                lambda1: vec![3.0, 3.0],
                lambda2: vec![1.5, 1.5],
                big_lambda: vec![1.0, 1.0],
                q_diag: None,
                varpi: 0.1,
                nu: 1.0,
                epsilon: 1e-4,
                k_init: [1e-4; 4],
                zeta_init: 0.01,
            },
        };
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Resolve into a runnable scenario. The optional duration override
    /// extends (or trims, within validity) the hold at the final waypoint.
    pub fn scenario(&self, seed: u64, duration_override: Option<f64>) -> Result<Scenario> {
        self.params.validate()?;
        let plant_params = match &self.plant_params {
            Some(p) => {
                p.validate()?;
                if p.arm_dof() != self.params.arm_dof() {
                    return Err(SimError::Config(format!(
                        "plant has {} joints, nominal model has {}",
                        p.arm_dof(),
                        self.params.arm_dof()
                    )));
                }
                p.clone()
            }
            None => self.params.clone(),
        };
        let mut mission = self.mission.resolve();
        if let Some(d) = duration_override {
            mission.duration = d;
        }
        mission.validate()?;
        if mission.arm_dof() != self.params.arm_dof() {
            return Err(SimError::Config(format!(
                "mission targets {} joints, model has {}",
                mission.arm_dof(),
                self.params.arm_dof()
            )));
        }
        let disturbance = self.disturbance.resolve(self.params.dim(), seed)?;
        self.sim.validate()?;
        if !(self.control.reference_filter_hz > 0.0) {
            return Err(SimError::Config(
                "reference_filter_hz must be positive".into(),
            ));
        }
        if !(self.control.acc_norm_cap > 0.0) {
            return Err(SimError::Config("acc_norm_cap must be positive".into()));
        }
        Ok(Scenario {
            params: self.params.clone(),
            plant_params,
            mission,
            disturbance,
            sim: self.sim,
            options: ControllerOptions {
                gravity_trim: self.control.gravity_trim,
                actuation: ActuationMode::Underactuated,
                robust_enabled: true,
                reference_filter_hz: self.control.reference_filter_hz,
                acc_norm_cap: self.control.acc_norm_cap,
            },
        })
    }

    /// Build the modular controller for a scenario.
    pub fn proposed_controller(&self, sc: &Scenario) -> Result<ModularAsmc> {
        ModularAsmc::new(
            self.proposed.position.resolve()?,
            self.proposed.attitude.resolve()?,
            self.proposed.arm.resolve()?,
            sc.mission.clone(),
            sc.params.clone(),
            sc.sim.control_period,
            sc.options,
        )
    }

    /// Build the monolithic baseline for a scenario.
    pub fn baseline_controller(&self, sc: &Scenario) -> Result<CoupledAsmc> {
        let setup = self
            .baseline
            .resolve(&sc.params, &sc.initial_state().coords)?;
        CoupledAsmc::new(
            setup,
            sc.mission.clone(),
            sc.params.clone(),
            sc.sim.control_period,
            sc.options,
        )
    }
}

/// A fully resolved run: plant parameters, mission, disturbance, and
/// engine settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Nominal model handed to the controllers.
    pub params: UamParams,
    /// True parameters of the simulated vehicle.
    pub plant_params: UamParams,
    pub mission: Mission,
    pub disturbance: DisturbanceProfile,
    pub sim: SimConfig,
    pub options: ControllerOptions,
}

impl Scenario {
    /// At rest at the first waypoint.
    pub fn initial_state(&self) -> SystemState {
        let w = &self.mission.waypoints[0];
        SystemState::at_rest(GeneralizedCoords::new(
            w.position,
            Vector3::new(0.0, 0.0, w.yaw),
            w.arm.clone(),
        ))
    }

    pub fn plant(&self) -> Result<UamPlant> {
        UamPlant::new(self.plant_params.clone(), self.disturbance.clone())
    }
}

/// Which controller to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Proposed,
    Baseline,
}

/// Run one controller on the configured scenario.
pub fn run_one(cfg: &AppConfig, seed: u64, duration: Option<f64>, kind: ControllerKind) -> Result<SimTrace> {
    let sc = cfg.scenario(seed, duration)?;
    let mut plant = sc.plant()?;
    let initial = sc.initial_state();
    let events = sc.mission.payload_events.clone();
    match kind {
        ControllerKind::Proposed => {
            let mut ctl = cfg.proposed_controller(&sc)?;
            sim::run(&mut plant, &mut ctl, initial, sc.mission.duration, &events, &sc.sim)
        }
        ControllerKind::Baseline => {
            let mut ctl = cfg.baseline_controller(&sc)?;
            sim::run(&mut plant, &mut ctl, initial, sc.mission.duration, &events, &sc.sim)
        }
    }
}

/// Run both controllers on the same scenario, concurrently.
pub fn run_pair(cfg: &AppConfig, seed: u64, duration: Option<f64>) -> Result<(SimTrace, SimTrace)> {
    let (proposed, baseline) = std::thread::scope(|s| {
        let p = s.spawn(|| run_one(cfg, seed, duration, ControllerKind::Proposed));
        let b = s.spawn(|| run_one(cfg, seed, duration, ControllerKind::Baseline));
        (p.join(), b.join())
    });
    let proposed = proposed.map_err(|_| SimError::Config("proposed run panicked".into()))??;
    let baseline = baseline.map_err(|_| SimError::Config("baseline run panicked".into()))??;
    Ok((proposed, baseline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_config_round_trips_json() {
        let cfg = AppConfig::default();
        let text = cfg.to_json();
        let back = AppConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn malformed_json_is_a_config_error() {
        assert!(matches!(
            AppConfig::from_json("{ not json"),
            Err(SimError::Config(_))
        ));
        assert!(matches!(
            AppConfig::from_json("{}"),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn both_presets_build_controllers() {
        for cfg in [AppConfig::desk_reference(), AppConfig::reference_tuning()] {
            let sc = cfg.scenario(1, None).unwrap();
            cfg.proposed_controller(&sc).unwrap();
            cfg.baseline_controller(&sc).unwrap();
        }
    }

    #[test]
    fn disturbance_phase_is_seeded_and_reproducible() {
        let cfg = AppConfig::default();
        let a = cfg.scenario(7, None).unwrap().disturbance;
        let b = cfg.scenario(7, None).unwrap().disturbance;
        let c = cfg.scenario(8, None).unwrap().disturbance;
        assert_eq!(a.phase, b.phase);
        assert_ne!(a.phase, c.phase);

        let mut pinned = AppConfig::default();
        pinned.disturbance.phase = Some(0.25);
        let d = pinned.scenario(99, None).unwrap().disturbance;
        assert_relative_eq!(d.phase, 0.25);
    }

    #[test]
    fn baseline_nominal_inertia_derives_from_start_pose() {
        let cfg = AppConfig::default();
        let sc = cfg.scenario(1, None).unwrap();
        let start = sc.initial_state().coords;
        let m0 = mass_matrix(&start, &sc.params).unwrap();
        let setup = cfg.baseline.resolve(&sc.params, &start).unwrap();
        for k in 0..8 {
            assert_relative_eq!(setup.controller.m_bar[(k, k)], m0[(k, k)], epsilon = 1e-12);
        }
        assert_relative_eq!(setup.controller.m_bar[(0, 0)], 2.2, epsilon = 1e-12);
    }

    #[test]
    fn duration_override_must_cover_the_waypoints() {
        let cfg = AppConfig::default();
        assert!(cfg.scenario(1, Some(90.0)).is_ok());
        assert!(matches!(
            cfg.scenario(1, Some(10.0)),
            Err(SimError::InvalidMission(_))
        ));
    }

    #[test]
    fn mismatched_subsystem_dimensions_are_rejected() {
        let mut cfg = AppConfig::default();
        cfg.proposed.position.lambda1 = vec![1.0, 1.0];
        assert!(matches!(
            cfg.proposed
                .position
                .resolve(),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn short_closed_loop_run_completes() {
        // Integration smoke test: 100 physics steps of the full stack,
        // holding the starting pose.
        let mut cfg = AppConfig::default();
        cfg.mission = MissionSettings::Explicit(Mission {
            waypoints: vec![
                crate::trajectory::Waypoint {
                    t: 0.0,
                    position: Vector3::zeros(),
                    yaw: 0.0,
                    arm: DVector::from_vec(vec![0.0, 0.5]),
                },
                crate::trajectory::Waypoint {
                    t: 0.08,
                    position: Vector3::zeros(),
                    yaw: 0.0,
                    arm: DVector::from_vec(vec![0.0, 0.5]),
                },
            ],
            duration: 0.1,
            payload_events: vec![],
        });
        let trace = run_one(&cfg, 1, None, ControllerKind::Proposed).unwrap();
        assert!(
            trace.outcome.is_completed(),
            "outcome: {:?}",
            trace.outcome
        );
        assert!(!trace.records.is_empty());
    }
}
