//! Closed-loop simulation suite for a quadrotor with an n-link manipulator.
//!
//! The plant is a coupled rigid-body model
//!
//! ```text
//!     M(chi) chi_dd + C(chi, chi_d) chi_d + g(chi) + d(t) = tau
//! ```
//!
//! in generalized coordinates `chi = [p; q; alpha]` (vehicle position,
//! Z-Y-X Euler attitude, joint angles). Two controllers close the loop:
//!
//! * [`proposed::ModularAsmc`] — three independent adaptive sliding-mode
//!   subsystems (position / attitude / manipulator), each with its own
//!   sliding variable, robust-gain estimate, and boundary layer;
//! * [`baseline::CoupledAsmc`] — a single adaptive sliding-mode law over
//!   the full coordinate vector with one shared gain set.
//!
//! [`sim`] integrates the plant (RK4, zero-order-hold torques), [`trajectory`]
//! supplies the scripted pick-and-place mission, and [`analysis`] reduces
//! traces to RMS reports, ultimate-bound checks, and controller comparisons.

pub mod analysis;
pub mod baseline;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod gains;
pub mod proposed;
pub mod sim;
pub mod trajectory;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum SimError {
    /// Euler-angle pitch too close to +-pi/2; the body-rate Jacobian is singular there.
    #[error("attitude singularity: |pitch| = {pitch:.6} rad is within {margin:.1e} of pi/2")]
    AttitudeSingularity { pitch: f64, margin: f64 },

    /// A parameter failed validation (negative mass, bad dimension, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Companion matrix of the error dynamics is not Hurwitz.
    #[error("error-dynamics matrix is not Hurwitz: max eigenvalue real part {max_re:.3e}")]
    NotHurwitz { max_re: f64 },

    /// Lyapunov equation could not be solved or produced an indefinite result.
    #[error("Lyapunov solve failed: {0}")]
    LyapunovSolve(String),

    /// Commanded translational force has non-positive vertical component;
    /// thrust magnitude and tilt angles cannot be extracted from it.
    #[error("thrust extraction: commanded force has non-positive z-component {fz:.3e}")]
    NonPositiveThrust { fz: f64 },

    /// A linear solve on the mass matrix failed (should be unreachable for
    /// physical parameters, where M is positive definite).
    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    /// Payload bookkeeping went negative.
    #[error("payload event at t = {t:.3} s would make payload mass negative ({mass:.3e} kg)")]
    NegativePayload { t: f64, mass: f64 },

    /// Mission is malformed (non-increasing waypoint times, events out of range, ...).
    #[error("invalid mission: {0}")]
    InvalidMission(String),

    /// Trajectory evaluated outside the mission time range.
    #[error("time {t:.3} s outside mission range [0, {duration:.3}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    /// Two traces cannot be compared (different missions or lengths).
    #[error("traces are not comparable: {0}")]
    IncomparableTraces(String),

    /// Analysis window selects no samples.
    #[error("analysis window [{start:.3}, {end:.3}] selects no samples")]
    EmptyWindow { start: f64, end: f64 },

    /// Configuration file could not be read or parsed.
    #[error("config error: {0}")]
    Config(String),

    /// Dimension mismatch between interacting objects.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// I/O while writing traces or reports.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SimError>;
