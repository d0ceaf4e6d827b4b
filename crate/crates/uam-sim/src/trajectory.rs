//! Reference trajectories: timed waypoints joined by quintic rest-to-rest
//! segments, and the scripted pick-and-place mission used throughout the
//! suite.
//!
//! Each segment between consecutive waypoints follows the minimum-jerk
//! profile
//!
//! ```text
//!     s(u) = 10 u^3 - 15 u^4 + 6 u^5,      u = (t - t_k) / (t_{k+1} - t_k)
//! ```
//!
//! which satisfies s(0) = 0, s(1) = 1 and has zero first and second
//! derivatives at both ends, so position, velocity, and acceleration are
//! continuous through every waypoint and the vehicle passes each waypoint
//! exactly, at rest relative to the segment. Past the last waypoint the
//! reference holds its final value with zero rates until the mission
//! duration runs out.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::PayloadEvent;
use crate::{Result, SimError};

/// One timed reference pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Arrival time, s.
    pub t: f64,
    /// Vehicle position, m.
    pub position: Vector3<f64>,
    /// Yaw setpoint, rad.
    pub yaw: f64,
    /// Joint angles, rad.
    pub arm: DVector<f64>,
}

/// A full scripted mission: waypoint list plus payload events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub waypoints: Vec<Waypoint>,
    /// Total simulated time, s; at least the last waypoint time.
    pub duration: f64,
    /// Instantaneous payload changes, sorted by time.
    pub payload_events: Vec<PayloadEvent>,
}

/// Reference state at one instant: position, yaw, and joint targets with
/// their first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredState {
    pub p: Vector3<f64>,
    pub p_dot: Vector3<f64>,
    pub p_ddot: Vector3<f64>,
    pub yaw: f64,
    pub yaw_dot: f64,
    pub yaw_ddot: f64,
    pub alpha: DVector<f64>,
    pub alpha_dot: DVector<f64>,
    pub alpha_ddot: DVector<f64>,
}

/// Quintic blend s and its first two derivatives with respect to u.
fn quintic(u: f64) -> (f64, f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        10.0 * u3 - 15.0 * u2 * u2 + 6.0 * u2 * u3,
        30.0 * u2 - 60.0 * u3 + 30.0 * u2 * u2,
        60.0 * u - 180.0 * u2 + 120.0 * u3,
    )
}

impl Mission {
    /// Validate ordering, dimensions, and event placement.
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(SimError::InvalidMission(
                "a mission needs at least two waypoints".into(),
            ));
        }
        if self.waypoints[0].t != 0.0 {
            return Err(SimError::InvalidMission(format!(
                "first waypoint must be at t = 0, got {}",
                self.waypoints[0].t
            )));
        }
        for pair in self.waypoints.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(SimError::InvalidMission(format!(
                    "waypoint times must increase strictly: {} then {}",
                    pair[0].t, pair[1].t
                )));
            }
        }
        let n = self.waypoints[0].arm.len();
        if n == 0 {
            return Err(SimError::InvalidMission("waypoints carry no joint targets".into()));
        }
        if self.waypoints.iter().any(|w| w.arm.len() != n) {
            return Err(SimError::InvalidMission(
                "all waypoints must target the same joint count".into(),
            ));
        }
        let t_last = self.waypoints.last().unwrap().t;
        if self.duration < t_last {
            return Err(SimError::InvalidMission(format!(
                "duration {} ends before the last waypoint at {}",
                self.duration, t_last
            )));
        }
        for pair in self.payload_events.windows(2) {
            if pair[1].time < pair[0].time {
                return Err(SimError::InvalidMission(
                    "payload events must be sorted by time".into(),
                ));
            }
        }
        if self
            .payload_events
            .iter()
            .any(|e| e.time < 0.0 || e.time > self.duration)
        {
            return Err(SimError::InvalidMission(
                "payload event outside mission duration".into(),
            ));
        }
        Ok(())
    }

    /// Joint count targeted by the mission.
    pub fn arm_dof(&self) -> usize {
        self.waypoints[0].arm.len()
    }

    /// Reference state at time t. Holds the final waypoint once passed;
    /// errors outside [0, duration].
    pub fn eval(&self, t: f64) -> Result<DesiredState> {
        if !(t >= 0.0 && t <= self.duration + 1e-9) {
            return Err(SimError::TimeOutOfRange {
                t,
                duration: self.duration,
            });
        }
        let n = self.arm_dof();
        let last = self.waypoints.last().unwrap();
        if t >= last.t {
            return Ok(DesiredState {
                p: last.position,
                p_dot: Vector3::zeros(),
                p_ddot: Vector3::zeros(),
                yaw: last.yaw,
                yaw_dot: 0.0,
                yaw_ddot: 0.0,
                alpha: last.arm.clone(),
                alpha_dot: DVector::zeros(n),
                alpha_ddot: DVector::zeros(n),
            });
        }
        let k = self
            .waypoints
            .windows(2)
            .position(|pair| t >= pair[0].t && t < pair[1].t)
            .expect("t is within the waypoint span");
        let (a, b) = (&self.waypoints[k], &self.waypoints[k + 1]);
        let span = b.t - a.t;
        let u = (t - a.t) / span;
        let (s, s1, s2) = quintic(u);

        let dp = b.position - a.position;
        let dyaw = b.yaw - a.yaw;
        let dalpha = &b.arm - &a.arm;
        Ok(DesiredState {
            p: a.position + dp * s,
            p_dot: dp * (s1 / span),
            p_ddot: dp * (s2 / (span * span)),
            yaw: a.yaw + dyaw * s,
            yaw_dot: dyaw * s1 / span,
            yaw_ddot: dyaw * s2 / (span * span),
            alpha: &a.arm + &dalpha * s,
            alpha_dot: &dalpha * (s1 / span),
            alpha_ddot: &dalpha * (s2 / (span * span)),
        })
    }
}

/// Geometry and payload of the scripted pick-and-place mission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickPlaceConfig {
    /// Mass picked up at the first hold and released at the second, kg.
    pub payload_mass: f64,
    /// Cruise height above the start, m.
    pub cruise_height: f64,
    /// Horizontal distance to the pick and place stations, m.
    pub reach: f64,
}

impl Default for PickPlaceConfig {
    fn default() -> Self {
        Self {
            payload_mass: 0.2,
            cruise_height: 1.0,
            reach: 1.0,
        }
    }
}

/// The scripted pick-and-place sortie, 80 s end to end:
///
/// | t, s | action                                           |
/// |------|--------------------------------------------------|
/// | 0    | on the ground, arm folded (0 deg, 90 deg)        |
/// | 2    | take off to cruise height                        |
/// | 30   | arrive over the pick station, arm at (45, 45) deg|
/// | 35   | hold; payload attaches                           |
/// | 65   | arrive over the place station, arm at (-45, -45) |
/// | 70   | hold; payload detaches                           |
/// | 78   | return to the start column, hold to 80 s         |
pub fn pick_place_mission(cfg: &PickPlaceConfig) -> Mission {
    let d = std::f64::consts::FRAC_PI_4;
    let h = cfg.cruise_height;
    let r = cfg.reach;
    let wp = |t: f64, x: f64, z: f64, a1: f64, a2: f64| Waypoint {
        t,
        position: Vector3::new(x, 0.0, z),
        yaw: 0.0,
        arm: DVector::from_vec(vec![a1, a2]),
    };
    Mission {
        waypoints: vec![
            wp(0.0, 0.0, 0.0, 0.0, 2.0 * d),
            wp(2.0, 0.0, h, 0.0, 2.0 * d),
            wp(30.0, -r, h, d, d),
            wp(35.0, -r, h, d, d),
            wp(65.0, r, h, -d, -d),
            wp(70.0, r, h, -d, -d),
            wp(78.0, 0.0, h, -d, -d),
        ],
        duration: 80.0,
        payload_events: vec![
            PayloadEvent {
                time: 35.0,
                delta_mass: cfg.payload_mass,
            },
            PayloadEvent {
                time: 70.0,
                delta_mass: -cfg.payload_mass,
            },
        ],
    }
}
