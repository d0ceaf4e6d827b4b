//! Subsystem-level sliding-mode control core.
//!
//! Each controlled subsystem (vehicle position, vehicle attitude,
//! manipulator joints) tracks a reference `x_d(t)` with error
//! `e = x - x_d`. Stacking `xi = [e; e_dot]` gives the error dynamics a
//! companion structure
//!
//! ```text
//!     A = [ 0          I        ]
//!         [ -lambda_1  -lambda_2 ]
//! ```
//!
//! when the nominal control cancels everything else. For a Hurwitz `A` and
//! user-chosen symmetric positive definite `Q`, the Lyapunov equation
//! `A^T P + P A = -Q` has a unique symmetric positive definite solution `P`,
//! and the sliding variable is
//!
//! ```text
//!     r = B^T P xi,     B = [0; I],
//! ```
//!
//! i.e. `r = P_21 e + P_22 e_dot`. The robust term that rejects coupling
//! forces and disturbances is the boundary-layer-smoothed unit vector
//!
//! ```text
//!     delta = rho r / max(|r|, varpi)
//! ```
//!
//! with an adaptive magnitude `rho` supplied by the gain estimator, and the
//! applied torque is
//!
//! ```text
//!     tau = M_bar ( x_dd_desired - Lambda (e + e_dot) - delta ).
//! ```
//!
//! `M_bar` is a constant nominal inertia chosen per subsystem; no part of
//! the law needs the true coupled inertia, Coriolis, or gravity terms —
//! those all land in the lumped uncertainty the adaptive magnitude covers.
//!
//! The module also contains the differential-flatness step that converts a
//! desired world-frame force into a collective thrust and a roll/pitch
//! setpoint at a given yaw.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::dynamics::rotation_matrix;
use crate::{Result, SimError};

/// Eigenvalues of the companion matrix must sit strictly left of this line.
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// Acceptable residual for the Lyapunov solve, max-norm of A^T P + P A + Q.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;

/// Commanded pitch is clamped inside the Euler singularity by this margin, rad.
pub const MAX_COMMANDED_PITCH: f64 = std::f64::consts::FRAC_PI_2 - 0.1;

/// Tracking error pair for one subsystem.
#[derive(Debug, Clone)]
pub struct TrackingError {
    pub e: DVector<f64>,
    pub e_dot: DVector<f64>,
}

impl TrackingError {
    pub fn new(e: DVector<f64>, e_dot: DVector<f64>) -> Self {
        Self { e, e_dot }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DVector::zeros(dim))
    }

    /// Stacked state xi = [e; e_dot].
    pub fn stacked(&self) -> DVector<f64> {
        let d = self.e.len();
        let mut xi = DVector::zeros(2 * d);
        xi.rows_mut(0, d).copy_from(&self.e);
        xi.rows_mut(d, d).copy_from(&self.e_dot);
        xi
    }
}

/// Companion matrix of the closed-loop error dynamics.
pub fn build_companion(lambda1: &DMatrix<f64>, lambda2: &DMatrix<f64>) -> DMatrix<f64> {
    let d = lambda1.nrows();
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    a.view_mut((0, d), (d, d))
        .copy_from(&DMatrix::identity(d, d));
    a.view_mut((d, 0), (d, d)).copy_from(&(-lambda1));
    a.view_mut((d, d), (d, d)).copy_from(&(-lambda2));
    a
}

/// Largest real part among the eigenvalues of a square matrix.
pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve the continuous Lyapunov equation `A^T P + P A = -Q` by Kronecker
/// vectorization: `(I (x) A^T + A^T (x) I) vec(P) = -vec(Q)`.
///
/// The returned matrix is symmetrized; the caller is expected to verify the
/// residual (done by [`SubsystemController::new`]).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(SimError::DimensionMismatch(format!(
            "Lyapunov solve needs square same-size matrices, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let sol = nalgebra::LU::new(k)
        .solve(&rhs)
        .ok_or_else(|| SimError::LyapunovSolve("Kronecker system is singular".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

fn check_spd(m: &DMatrix<f64>, label: &str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 {
        return Err(SimError::InvalidParameter(format!("{label} is not symmetric")));
    }
    if nalgebra::Cholesky::new(m.clone()).is_none() {
        return Err(SimError::InvalidParameter(format!(
            "{label} is not positive definite"
        )));
    }
    Ok(())
}

/// One subsystem's fixed control structure: nominal inertia, error-dynamics
/// matrices, Lyapunov solution, and boundary-layer width.
#[derive(Debug, Clone)]
pub struct SubsystemController {
    dim: usize,
    pub m_bar: DMatrix<f64>,
    pub lambda1: DMatrix<f64>,
    pub lambda2: DMatrix<f64>,
    pub big_lambda: DMatrix<f64>,
    /// Companion matrix of the error dynamics.
    pub a: DMatrix<f64>,
    /// Lyapunov solution for the configured Q.
    pub p: DMatrix<f64>,
    /// B^T P = [P_21 P_22], the map from stacked error to sliding variable.
    bt_p: DMatrix<f64>,
    /// Boundary-layer width of the robust term.
    pub varpi: f64,
}

impl SubsystemController {
    /// Build and validate the subsystem structure.
    ///
    /// Checks, in order: dimensions; `M_bar`, `Q` symmetric positive
    /// definite; companion matrix Hurwitz with margin [`HURWITZ_MARGIN`];
    /// Lyapunov residual below [`LYAPUNOV_RESIDUAL_TOL`] with `P` positive
    /// definite; `varpi > 0`.
    pub fn new(
        m_bar: DMatrix<f64>,
        lambda1: DMatrix<f64>,
        lambda2: DMatrix<f64>,
        big_lambda: DMatrix<f64>,
        q_lyap: DMatrix<f64>,
        varpi: f64,
    ) -> Result<Self> {
        let d = m_bar.nrows();
        if d == 0 {
            return Err(SimError::InvalidParameter("empty subsystem".into()));
        }
        for (m, label) in [
            (&m_bar, "M_bar"),
            (&lambda1, "lambda_1"),
            (&lambda2, "lambda_2"),
            (&big_lambda, "Lambda"),
        ] {
            if m.nrows() != d || m.ncols() != d {
                return Err(SimError::DimensionMismatch(format!(
                    "{label} must be {d}x{d}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if q_lyap.nrows() != 2 * d || q_lyap.ncols() != 2 * d {
            return Err(SimError::DimensionMismatch(format!(
                "Q must be {0}x{0}, got {1}x{2}",
                2 * d,
                q_lyap.nrows(),
                q_lyap.ncols()
            )));
        }
        check_spd(&m_bar, "M_bar")?;
        check_spd(&q_lyap, "Q")?;
        if !(varpi > 0.0) {
            return Err(SimError::InvalidParameter(format!(
                "boundary layer width must be positive, got {varpi}"
            )));
        }

        let a = build_companion(&lambda1, &lambda2);
        let max_re = max_real_eigenvalue(&a);
        if max_re >= -HURWITZ_MARGIN {
            return Err(SimError::NotHurwitz { max_re });
        }

        let p = solve_lyapunov(&a, &q_lyap)?;
        let residual = (a.transpose() * &p + &p * &a + &q_lyap).amax();
        if residual > LYAPUNOV_RESIDUAL_TOL {
            return Err(SimError::LyapunovSolve(format!(
                "residual {residual:.3e} above {LYAPUNOV_RESIDUAL_TOL:.1e}"
            )));
        }
        if nalgebra::Cholesky::new(p.clone()).is_none() {
            return Err(SimError::LyapunovSolve(
                "Lyapunov solution is not positive definite".into(),
            ));
        }

        let bt_p = p.view((d, 0), (d, 2 * d)).into_owned();
        Ok(Self {
            dim: d,
            m_bar,
            lambda1,
            lambda2,
            big_lambda,
            a,
            p,
            bt_p,
            varpi,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sliding variable `r = B^T P [e; e_dot] = P_21 e + P_22 e_dot`.
    pub fn sliding_variable(&self, err: &TrackingError) -> DVector<f64> {
        &self.bt_p * err.stacked()
    }

    /// Boundary-layer-smoothed robust term `rho r / max(|r|, varpi)`.
    /// Continuous across the layer edge and bounded by `rho` in norm.
    pub fn robust_term(&self, r: &DVector<f64>, rho: f64) -> DVector<f64> {
        let norm = r.norm();
        if norm >= self.varpi {
            r * (rho / norm)
        } else {
            r * (rho / self.varpi)
        }
    }

    /// Torque command `tau = M_bar ( x_dd_desired - Lambda (e + e_dot) - delta )`.
    pub fn torque(
        &self,
        err: &TrackingError,
        x_dd_desired: &DVector<f64>,
        delta: &DVector<f64>,
    ) -> DVector<f64> {
        let feedback = &self.big_lambda * (&err.e + &err.e_dot);
        &self.m_bar * (x_dd_desired - feedback - delta)
    }
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation-matrix attitude error and its rate:
///
/// ```text
///     e   = 1/2 ( R_d^T R - R^T R_d )^vee
///     e_r = q_dot - R_d^T R q_dot_desired
/// ```
///
/// Both vanish when the attitude and its rate match the reference; near the
/// reference the error reduces to the Euler-angle difference.
pub fn attitude_error(
    q: &Vector3<f64>,
    q_desired: &Vector3<f64>,
    q_dot: &Vector3<f64>,
    q_dot_desired: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let r = rotation_matrix(q)?;
    let r_d = rotation_matrix(q_desired)?;
    let rel = r_d.transpose() * r;
    let e = vee(&((rel - rel.transpose()) * 0.5));
    let e_dot = q_dot - rel * q_dot_desired;
    Ok((e, e_dot))
}

/// Convert a desired world-frame force into collective thrust and an
/// attitude setpoint `(roll, pitch, yaw_desired)`.
///
/// The desired body z-axis is the force direction; at yaw `psi_d` the
/// setpoint follows from the Z-Y-X factorization of that axis:
/// `w = Rz(psi_d)^T f/|f|`, `roll = -asin(w_y)`, `pitch = atan2(w_x, w_z)`.
/// The vertical force component must be positive (a rotor stack cannot
/// push down), and the pitch command is clamped to
/// [`MAX_COMMANDED_PITCH`] to stay clear of the Euler singularity.
pub fn thrust_attitude_setpoint(
    force: &Vector3<f64>,
    psi_desired: f64,
) -> Result<(f64, Vector3<f64>)> {
    if force.z <= 0.0 {
        return Err(SimError::NonPositiveThrust { fz: force.z });
    }
    let u1 = force.norm();
    let z_b = force / u1;
    let (s, c) = psi_desired.sin_cos();
    // Rz(psi)^T z_b
    let w = Vector3::new(c * z_b.x + s * z_b.y, -s * z_b.x + c * z_b.y, z_b.z);
    let roll = (-w.y).clamp(-1.0, 1.0).asin();
    let pitch = w.x.atan2(w.z).clamp(-MAX_COMMANDED_PITCH, MAX_COMMANDED_PITCH);
    Ok((u1, Vector3::new(roll, pitch, psi_desired)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn scalar_controller(varpi: f64) -> SubsystemController {
        SubsystemController::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            varpi,
        )
        .unwrap()
    }

    #[test]
    fn companion_matrix_eigenvalues_for_unit_gains() {
        // lambda_1 = lambda_2 = 1 gives s^2 + s + 1 = 0, roots -1/2 +- i sqrt(3)/2.
        let a = build_companion(&DMatrix::identity(1, 1), &DMatrix::identity(1, 1));
        let mut eigs: Vec<_> = a.complex_eigenvalues().iter().cloned().collect();
        eigs.sort_by(|x, y| x.im.partial_cmp(&y.im).unwrap());
        assert_relative_eq!(eigs[0].re, -0.5, epsilon = 1e-12);
        assert_relative_eq!(eigs[0].im, -(3.0f64.sqrt()) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(eigs[1].re, -0.5, epsilon = 1e-12);
        assert_relative_eq!(eigs[1].im, 3.0f64.sqrt() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_solution_for_unit_companion_is_known() {
        // A = [0 1; -1 -1], Q = I has the hand-checked solution
        // P = [1.5 0.5; 0.5 1.0]: A^T P + P A = -I.
        let c = scalar_controller(0.1);
        let expected = DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 1.0]);
        assert_abs_diff_eq!(c.p, expected, epsilon = 1e-12);
    }

    #[test]
    fn sliding_variable_weights_error_pair() {
        // With P as above, r = 0.5 e + 1.0 e_dot; e = e_dot = 1 gives 1.5.
        let c = scalar_controller(0.1);
        let err = TrackingError::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0]));
        let r = c.sliding_variable(&err);
        assert_relative_eq!(r[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_residual_small_for_random_stable_systems() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..20 {
            let d = rng.gen_range(1..=4usize);
            let lambda1 =
                DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| rng.gen_range(0.5..4.0)));
            let lambda2 =
                DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| rng.gen_range(0.5..4.0)));
            let a = build_companion(&lambda1, &lambda2);
            let q = DMatrix::identity(2 * d, 2 * d);
            let p = solve_lyapunov(&a, &q).unwrap();
            let residual = (a.transpose() * &p + &p * &a + q).amax();
            assert!(residual < 1e-12, "residual {residual:.3e}");
            assert!(nalgebra::Cholesky::new(p).is_some());
        }
    }

    #[test]
    fn non_hurwitz_gains_are_rejected() {
        // lambda_1 = -1 puts a root in the right half plane.
        let r = SubsystemController::new(
            DMatrix::identity(1, 1),
            -DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            0.1,
        );
        assert!(matches!(r, Err(SimError::NotHurwitz { .. })));
    }

    #[test]
    fn torque_law_hand_example() {
        // M_bar = I, Lambda = I, e = 0.1, e_dot = 0, delta = 0.05, x_dd = 0:
        // tau = -(0.1 + 0.05) = -0.15.
        let c = scalar_controller(0.1);
        let err = TrackingError::new(DVector::from_vec(vec![0.1]), DVector::zeros(1));
        let delta = DVector::from_vec(vec![0.05]);
        let tau = c.torque(&err, &DVector::zeros(1), &delta);
        assert_relative_eq!(tau[0], -0.15, epsilon = 1e-12);
    }

    #[test]
    fn robust_term_saturates_outside_boundary_layer() {
        let c = scalar_controller(0.5);
        // Outside: |r| = 2 >= 0.5, delta = rho * r/|r| = 0.3.
        let out = c.robust_term(&DVector::from_vec(vec![2.0]), 0.3);
        assert_relative_eq!(out[0], 0.3, epsilon = 1e-12);
        // Inside: |r| = 0.1 < 0.5, delta = rho * r / varpi = 0.3 * 0.2 = 0.06.
        let inside = c.robust_term(&DVector::from_vec(vec![0.1]), 0.3);
        assert_relative_eq!(inside[0], 0.06, epsilon = 1e-12);
    }

    proptest! {
        /// The robust term is continuous across the boundary-layer edge and
        /// never exceeds rho in norm.
        #[test]
        fn robust_term_continuous_and_bounded(
            rx in -3.0f64..3.0,
            ry in -3.0f64..3.0,
            rho in 0.0f64..5.0,
            varpi in 0.05f64..2.0,
        ) {
            let c = SubsystemController::new(
                DMatrix::identity(2, 2),
                DMatrix::identity(2, 2),
                DMatrix::identity(2, 2),
                DMatrix::identity(2, 2),
                DMatrix::identity(4, 4),
                varpi,
            ).unwrap();
            let r = DVector::from_vec(vec![rx, ry]);
            let delta = c.robust_term(&r, rho);
            prop_assert!(delta.norm() <= rho + 1e-12);

            // Continuity: evaluate just inside and just outside the edge
            // along the same direction.
            let norm = r.norm();
            if norm > 1e-9 {
                let dir = &r / norm;
                let edge = &dir * varpi;
                let eps = 1e-9;
                let just_in = c.robust_term(&(&edge * (1.0 - eps)), rho);
                let just_out = c.robust_term(&(&edge * (1.0 + eps)), rho);
                prop_assert!((just_in - just_out).norm() < 1e-6 * (1.0 + rho));
            }
        }
    }

    #[test]
    fn attitude_error_for_pure_yaw_offset() {
        // R_d = I, R = Rz(psi): e = (0, 0, sin psi).
        let psi = 0.4f64;
        let (e, _) = attitude_error(
            &Vector3::new(0.0, 0.0, psi),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
        )
        .unwrap();
        assert_abs_diff_eq!(e, Vector3::new(0.0, 0.0, psi.sin()), epsilon = 1e-12);
    }

    #[test]
    fn attitude_error_vanishes_on_reference() {
        let q = Vector3::new(0.3, -0.2, 1.1);
        let q_dot = Vector3::new(0.4, 0.1, -0.2);
        let (e, e_dot) = attitude_error(&q, &q, &q_dot, &q_dot).unwrap();
        assert_abs_diff_eq!(e, Vector3::zeros(), epsilon = 1e-12);
        assert_abs_diff_eq!(e_dot, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn attitude_error_rate_reduces_to_difference_near_reference() {
        let q = Vector3::new(0.1, 0.05, 0.2);
        let q_dot = Vector3::new(0.3, -0.1, 0.2);
        let q_dot_d = Vector3::new(0.25, -0.05, 0.15);
        let (_, e_dot) = attitude_error(&q, &q, &q_dot, &q_dot_d).unwrap();
        assert_abs_diff_eq!(e_dot, q_dot - q_dot_d, epsilon = 1e-12);
    }

    #[test]
    fn hover_force_maps_to_level_attitude() {
        // 2.2 kg at 9.81 m/s^2 needs 21.582 N straight up.
        let (u1, q_d) = thrust_attitude_setpoint(&Vector3::new(0.0, 0.0, 21.582), 0.0).unwrap();
        assert_relative_eq!(u1, 21.582, epsilon = 1e-12);
        assert_abs_diff_eq!(q_d, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn diagonal_force_pitches_forty_five_degrees() {
        let f = 12.0;
        let (u1, q_d) = thrust_attitude_setpoint(&Vector3::new(f, 0.0, f), 0.0).unwrap();
        assert_relative_eq!(u1, f * 2.0f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(q_d.y, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(q_d.x, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn setpoint_round_trips_through_rotation() {
        // R(q_d) applied to (0, 0, u1) must reproduce the requested force.
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..100 {
            let force = Vector3::new(
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-8.0..8.0),
                rng.gen_range(5.0..30.0),
            );
            let psi = rng.gen_range(-3.0..3.0);
            let (u1, q_d) = thrust_attitude_setpoint(&force, psi).unwrap();
            let r = rotation_matrix(&q_d).unwrap();
            let back = r * Vector3::new(0.0, 0.0, u1);
            assert_abs_diff_eq!(back, force, epsilon = 1e-10);
        }
    }

    #[test]
    fn downward_force_is_rejected() {
        let r = thrust_attitude_setpoint(&Vector3::new(1.0, 0.0, -2.0), 0.0);
        assert!(matches!(r, Err(SimError::NonPositiveThrust { .. })));
    }

    #[test]
    fn extreme_lateral_force_clamps_pitch() {
        let (_, q_d) = thrust_attitude_setpoint(&Vector3::new(1e4, 0.0, 1e-3), 0.0).unwrap();
        assert!(q_d.y <= MAX_COMMANDED_PITCH + 1e-15);
    }
}
