//! Coupled rigid-body dynamics of a quadrotor carrying an n-link manipulator.
//!
//! Generalized coordinates `chi = [p; q; alpha]`:
//!
//! * `p` — vehicle position in the world frame, m;
//! * `q = (phi, theta, psi)` — Z-Y-X Euler attitude (roll, pitch, yaw), rad;
//! * `alpha` — manipulator joint angles, rad (n entries).
//!
//! The model is
//!
//! ```text
//!     M(chi) chi_dd + C(chi, chi_d) chi_d + g(chi) + d(t) = tau
//! ```
//!
//! with `M` assembled exactly from body Jacobians (no small-angle or
//! decoupling approximations), `g` from analytic partials of the potential,
//! and `C` from Christoffel symbols of `M` evaluated by central finite
//! differences. Built this way the standard structural properties hold:
//! `M` is symmetric positive definite away from the pitch singularity, and
//! `dM/dt - 2C` is skew-symmetric along trajectories.
//!
//! The manipulator is a planar chain of uniform slender rods pinned under
//! the vehicle at `arm_mount_offset`, rotating in the body x-z plane.
//! Joint angle zero hangs a link straight down (-z in the body frame);
//! positive angles swing it toward +x. A point payload can attach to the
//! end effector and change mass instantaneously mid-mission.
//!
//! Attitude dynamics are expressed directly in Euler coordinates: the
//! body-rate Jacobian `E(q)` (with `omega_body = E(q) q_dot`) is folded into
//! the mass matrix, so `M_qq = E^T I E + (arm terms)`. `E` is singular at
//! pitch +-pi/2; every evaluation guards against that with
//! [`PITCH_SINGULARITY_MARGIN`].

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Result, SimError};

/// Guard band around the Euler pitch singularity at |theta| = pi/2, rad.
pub const PITCH_SINGULARITY_MARGIN: f64 = 1e-6;

/// Step for the central finite differences that build the Coriolis matrix.
const CHRISTOFFEL_FD_STEP: f64 = 1e-6;

/// Generalized coordinates of the vehicle-manipulator system.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedCoords {
    /// Vehicle position in the world frame, m.
    pub p: Vector3<f64>,
    /// Z-Y-X Euler attitude (roll, pitch, yaw), rad.
    pub q: Vector3<f64>,
    /// Manipulator joint angles, rad.
    pub alpha: DVector<f64>,
}

impl GeneralizedCoords {
    pub fn new(p: Vector3<f64>, q: Vector3<f64>, alpha: DVector<f64>) -> Self {
        Self { p, q, alpha }
    }

    /// Zero pose with an n-joint arm.
    pub fn zeros(n: usize) -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), DVector::zeros(n))
    }

    /// Number of generalized coordinates, 6 + n.
    pub fn dim(&self) -> usize {
        6 + self.alpha.len()
    }

    /// Arm joint count.
    pub fn arm_dof(&self) -> usize {
        self.alpha.len()
    }

    /// Stack into a flat vector [p; q; alpha].
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v.fixed_rows_mut::<3>(0).copy_from(&self.p);
        v.fixed_rows_mut::<3>(3).copy_from(&self.q);
        v.rows_mut(6, self.alpha.len()).copy_from(&self.alpha);
        v
    }

    /// Split a flat vector [p; q; alpha] back into coordinates.
    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() < 7 {
            return Err(SimError::DimensionMismatch(format!(
                "coordinate vector has {} entries, need at least 7",
                v.len()
            )));
        }
        Ok(Self {
            p: v.fixed_rows::<3>(0).into(),
            q: v.fixed_rows::<3>(3).into(),
            alpha: v.rows(6, v.len() - 6).into(),
        })
    }
}

/// Full dynamic state carried through the simulation.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub coords: GeneralizedCoords,
    /// Generalized velocity, same layout as the coordinates.
    pub chi_dot: DVector<f64>,
    /// Acceleration computed on the previous integration step; the
    /// controllers feed on it because accelerations are never measured
    /// directly, only reconstructed after the fact.
    pub chi_ddot_prev: DVector<f64>,
    /// Simulation time, s.
    pub t: f64,
}

impl SystemState {
    /// State at rest in the given pose at t = 0.
    pub fn at_rest(coords: GeneralizedCoords) -> Self {
        let dim = coords.dim();
        Self {
            coords,
            chi_dot: DVector::zeros(dim),
            chi_ddot_prev: DVector::zeros(dim),
            t: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.dim()
    }
}

/// Physical parameters of the vehicle-manipulator system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UamParams {
    /// Quadrotor mass, kg.
    pub quad_mass: f64,
    /// Mass of each arm link, kg (uniform slender rods).
    pub arm_link_masses: Vec<f64>,
    /// Length of each arm link, m.
    pub arm_link_lengths: Vec<f64>,
    /// Quadrotor inertia about its center of mass, body frame, kg m^2.
    /// Stored as the diagonal; the airframe is assumed axis-aligned.
    pub quad_inertia: Vector3<f64>,
    /// Arm base position relative to the vehicle center of mass, body frame, m.
    pub arm_mount_offset: Vector3<f64>,
    /// Point mass currently attached to the end effector, kg.
    pub payload_mass: f64,
    /// Gravitational acceleration, m/s^2.
    pub gravity_accel: f64,
}

impl Default for UamParams {
    /// 1.8 kg airframe with a two-link arm of 0.2 kg / 0.25 m rods mounted
    /// 5 cm under the center of mass: 2.2 kg all-up without payload.
    fn default() -> Self {
        Self {
            quad_mass: 1.8,
            arm_link_masses: vec![0.2, 0.2],
            arm_link_lengths: vec![0.25, 0.25],
            quad_inertia: Vector3::new(0.02, 0.02, 0.04),
            arm_mount_offset: Vector3::new(0.0, 0.0, -0.05),
            payload_mass: 0.0,
            gravity_accel: 9.81,
        }
    }
}

impl UamParams {
    /// Arm joint count.
    pub fn arm_dof(&self) -> usize {
        self.arm_link_masses.len()
    }

    /// Generalized coordinate count, 6 + n.
    pub fn dim(&self) -> usize {
        6 + self.arm_dof()
    }

    /// Total mass including payload, kg.
    pub fn total_mass(&self) -> f64 {
        self.quad_mass + self.arm_link_masses.iter().sum::<f64>() + self.payload_mass
    }

    pub fn validate(&self) -> Result<()> {
        if self.quad_mass <= 0.0 {
            return Err(SimError::InvalidParameter(format!(
                "quad_mass must be positive, got {}",
                self.quad_mass
            )));
        }
        if self.arm_link_masses.is_empty() {
            return Err(SimError::InvalidParameter(
                "arm needs at least one link".into(),
            ));
        }
        if self.arm_link_masses.len() != self.arm_link_lengths.len() {
            return Err(SimError::InvalidParameter(format!(
                "{} link masses but {} link lengths",
                self.arm_link_masses.len(),
                self.arm_link_lengths.len()
            )));
        }
        if self.arm_link_masses.iter().any(|&m| m < 0.0) {
            return Err(SimError::InvalidParameter("negative link mass".into()));
        }
        if self.arm_link_lengths.iter().any(|&l| l <= 0.0) {
            return Err(SimError::InvalidParameter("non-positive link length".into()));
        }
        if self.quad_inertia.iter().any(|&i| i <= 0.0) {
            return Err(SimError::InvalidParameter(
                "quad inertia diagonal must be positive".into(),
            ));
        }
        if self.payload_mass < 0.0 {
            return Err(SimError::InvalidParameter(format!(
                "payload_mass must be non-negative, got {}",
                self.payload_mass
            )));
        }
        if self.gravity_accel <= 0.0 {
            return Err(SimError::InvalidParameter(
                "gravity_accel must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Instantaneous payload mass change (pickup when positive, release when
/// negative), applied between integration steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadEvent {
    /// Event time, s.
    pub time: f64,
    /// Mass change, kg.
    pub delta_mass: f64,
}

impl PayloadEvent {
    /// Apply the mass change to the parameter set.
    pub fn apply(&self, params: &mut UamParams) -> Result<()> {
        let new_mass = params.payload_mass + self.delta_mass;
        if new_mass < 0.0 {
            return Err(SimError::NegativePayload {
                t: self.time,
                mass: new_mass,
            });
        }
        params.payload_mass = new_mass;
        Ok(())
    }
}

/// Shape of the exogenous disturbance d(t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    Zero,
    Constant,
    Sinusoidal,
    /// Two-tone signal per coordinate: the base sinusoid plus a component
    /// at a third of the frequency, scaled so the amplitude bound still
    /// holds. Each coordinate gets a fixed extra phase offset so the
    /// disturbance direction rotates through coordinate space instead of
    /// moving every channel in lockstep.
    Composite,
}

/// Time-driven generalized disturbance. Every kind satisfies
/// `|d_i(t)| <= |amplitude_i|` for all t.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceProfile {
    pub kind: DisturbanceKind,
    /// Per-coordinate amplitude, N (translational) / N m (rotational, joints).
    pub amplitude: DVector<f64>,
    /// Base frequency, Hz.
    pub frequency_hz: f64,
    /// Phase offset, rad.
    pub phase: f64,
}

impl DisturbanceProfile {
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: DisturbanceKind::Zero,
            amplitude: DVector::zeros(dim),
            frequency_hz: 0.0,
            phase: 0.0,
        }
    }

    /// Disturbance vector at time t.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let w = 2.0 * std::f64::consts::PI * self.frequency_hz;
        match self.kind {
            DisturbanceKind::Zero => DVector::zeros(self.amplitude.len()),
            DisturbanceKind::Constant => self.amplitude.clone(),
            DisturbanceKind::Sinusoidal => &self.amplitude * (w * t + self.phase).sin(),
            DisturbanceKind::Composite => {
                // Golden-angle stagger keeps the per-coordinate phases
                // incommensurate so no two channels stay synchronized.
                let stagger = 2.399_963_229_728_653;
                DVector::from_fn(self.amplitude.len(), |i, _| {
                    let off = self.phase + stagger * i as f64;
                    let s = 0.5 * ((w * t + off).sin() + (w / 3.0 * t + 0.5 * off).sin());
                    self.amplitude[i] * s
                })
            }
        }
    }
}

/// Mass matrix, Coriolis matrix, and gravity vector evaluated at one state.
#[derive(Debug, Clone)]
pub struct DynamicsMatrices {
    pub m: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl DynamicsMatrices {
    /// Evaluate all three terms at the given state.
    pub fn evaluate(
        coords: &GeneralizedCoords,
        chi_dot: &DVector<f64>,
        params: &UamParams,
    ) -> Result<Self> {
        Ok(Self {
            m: mass_matrix(coords, params)?,
            c: coriolis_matrix(coords, chi_dot, params)?,
            g: gravity_vector(coords, params)?,
        })
    }
}

/// Skew-symmetric cross-product matrix of v.
fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn check_pitch(q: &Vector3<f64>) -> Result<()> {
    let pitch = q.y;
    if pitch.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_SINGULARITY_MARGIN {
        return Err(SimError::AttitudeSingularity {
            pitch,
            margin: PITCH_SINGULARITY_MARGIN,
        });
    }
    Ok(())
}

/// Body-to-world rotation matrix for Z-Y-X Euler angles (roll phi about x,
/// pitch theta about y, yaw psi about z): `R = Rz(psi) Ry(theta) Rx(phi)`.
///
/// Errors when the pitch sits inside the singularity guard band, where the
/// companion body-rate Jacobian loses rank.
pub fn rotation_matrix(q: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_pitch(q)?;
    let (sphi, cphi) = q.x.sin_cos();
    let (sth, cth) = q.y.sin_cos();
    let (spsi, cpsi) = q.z.sin_cos();
    Ok(Matrix3::new(
        cpsi * cth,
        cpsi * sth * sphi - spsi * cphi,
        cpsi * sth * cphi + spsi * sphi,
        spsi * cth,
        spsi * sth * sphi + cpsi * cphi,
        spsi * sth * cphi - cpsi * sphi,
        -sth,
        sphi * cth,
        cth * cphi,
    ))
}

/// Jacobian E(q) mapping Euler rates to body angular velocity,
/// `omega_body = E(q) q_dot`. Singular at pitch +-pi/2.
pub fn euler_rate_jacobian(q: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_pitch(q)?;
    let (sphi, cphi) = q.x.sin_cos();
    let (sth, cth) = q.y.sin_cos();
    Ok(Matrix3::new(
        1.0, 0.0, -sth, //
        0.0, cphi, sphi * cth, //
        0.0, -sphi, cphi * cth,
    ))
}

/// Partial derivatives of the rotation matrix w.r.t. (phi, theta, psi).
fn rotation_matrix_partials(q: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (sphi, cphi) = q.x.sin_cos();
    let (sth, cth) = q.y.sin_cos();
    let (spsi, cpsi) = q.z.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cphi, -sphi, 0.0, sphi, cphi);
    let ry = Matrix3::new(cth, 0.0, sth, 0.0, 1.0, 0.0, -sth, 0.0, cth);
    let rz = Matrix3::new(cpsi, -spsi, 0.0, spsi, cpsi, 0.0, 0.0, 0.0, 1.0);
    let rx_d = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sphi, -cphi, 0.0, cphi, -sphi);
    let ry_d = Matrix3::new(-sth, 0.0, cth, 0.0, 0.0, 0.0, -cth, 0.0, -sth);
    let rz_d = Matrix3::new(-spsi, -cpsi, 0.0, cpsi, -spsi, 0.0, 0.0, 0.0, 0.0);
    [rz * ry * rx_d, rz * ry_d * rx, rz_d * ry * rx]
}

/// Arm chain geometry at a given joint configuration, in the body frame.
struct ArmGeometry {
    /// Center of mass of each link.
    coms: Vec<Vector3<f64>>,
    /// End-effector position.
    ee: Vector3<f64>,
    /// d com_i / d alpha (3 x n each).
    com_jacobians: Vec<DMatrix<f64>>,
    /// d ee / d alpha (3 x n).
    ee_jacobian: DMatrix<f64>,
    /// Unit direction of each link axis.
    directions: Vec<Vector3<f64>>,
}

/// Joint rotation axis in the body frame. With link directions
/// `d(theta) = (sin theta, 0, -cos theta)` the identity
/// `axis x d = d d/d theta` holds for `axis = (0, -1, 0)`.
const JOINT_AXIS: Vector3<f64> = Vector3::new(0.0, -1.0, 0.0);

fn arm_geometry(alpha: &DVector<f64>, params: &UamParams) -> ArmGeometry {
    let n = alpha.len();
    let mut coms = Vec::with_capacity(n);
    let mut com_jacobians = Vec::with_capacity(n);
    let mut directions = Vec::with_capacity(n);

    // Cumulative angles, directions, and their derivatives.
    let mut cum = 0.0;
    let mut dirs = Vec::with_capacity(n);
    let mut dirs_d = Vec::with_capacity(n);
    for i in 0..n {
        cum += alpha[i];
        let (s, c) = cum.sin_cos();
        dirs.push(Vector3::new(s, 0.0, -c));
        dirs_d.push(Vector3::new(c, 0.0, s));
    }

    let mut joint = params.arm_mount_offset;
    for i in 0..n {
        let li = params.arm_link_lengths[i];
        let com = joint + dirs[i] * (li / 2.0);
        // d com_i / d alpha_k = sum_{j=k..i-1} L_j d'_j + (L_i / 2) d'_i, k <= i.
        let mut jac = DMatrix::zeros(3, n);
        for k in 0..=i {
            let mut col = dirs_d[i] * (li / 2.0);
            for j in k..i {
                col += dirs_d[j] * params.arm_link_lengths[j];
            }
            jac.fixed_view_mut::<3, 1>(0, k).copy_from(&col);
        }
        coms.push(com);
        com_jacobians.push(jac);
        directions.push(dirs[i]);
        joint += dirs[i] * li;
    }

    let mut ee_jacobian = DMatrix::zeros(3, n);
    for k in 0..n {
        let mut col = Vector3::zeros();
        for j in k..n {
            col += dirs_d[j] * params.arm_link_lengths[j];
        }
        ee_jacobian.fixed_view_mut::<3, 1>(0, k).copy_from(&col);
    }

    ArmGeometry {
        coms,
        ee: joint,
        com_jacobians,
        ee_jacobian,
        directions,
    }
}

/// Accumulate `M += weight * J^T W J` for a 3 x dim Jacobian.
fn accumulate(m: &mut DMatrix<f64>, j: &DMatrix<f64>, w: &Matrix3<f64>, weight: f64) {
    let wj = w * j * weight;
    // M += J^T (W J)
    m.gemm_tr(1.0, j, &wj, 1.0);
}

/// Generalized mass matrix M(chi), (6+n) x (6+n).
///
/// Exact Gram assembly over bodies: for each body with world-frame velocity
/// `v = Jv chi_dot` and body-frame angular velocity `w = Jw chi_dot`,
/// `M += m Jv^T Jv + Jw^T I Jw`. Independent of `p` and symmetric by
/// construction; positive definite whenever all bodies have mass and the
/// pitch stays clear of the singularity.
pub fn mass_matrix(coords: &GeneralizedCoords, params: &UamParams) -> Result<DMatrix<f64>> {
    let n = coords.arm_dof();
    if n != params.arm_dof() {
        return Err(SimError::DimensionMismatch(format!(
            "state has {} joints, params have {}",
            n,
            params.arm_dof()
        )));
    }
    let dim = 6 + n;
    let r = rotation_matrix(&coords.q)?;
    let e = euler_rate_jacobian(&coords.q)?;
    let geo = arm_geometry(&coords.alpha, params);

    let mut m = DMatrix::zeros(dim, dim);
    let eye3 = Matrix3::identity();

    // Quadrotor body: v = p_dot, w_body = E q_dot.
    {
        let mut jv = DMatrix::zeros(3, dim);
        jv.fixed_view_mut::<3, 3>(0, 0).copy_from(&eye3);
        accumulate(&mut m, &jv, &eye3, params.quad_mass);

        let mut jw = DMatrix::zeros(3, dim);
        jw.fixed_view_mut::<3, 3>(0, 3).copy_from(&e);
        let inertia = Matrix3::from_diagonal(&params.quad_inertia);
        accumulate(&mut m, &jw, &inertia, 1.0);
    }

    // Arm links: slender rods. Translation of the rod center plus rotation
    // about it; the rod has no inertia about its own axis.
    for i in 0..n {
        let mass = params.arm_link_masses[i];
        let li = params.arm_link_lengths[i];

        let mut jv = DMatrix::zeros(3, dim);
        jv.fixed_view_mut::<3, 3>(0, 0).copy_from(&eye3);
        jv.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-r * hat(&geo.coms[i]) * e));
        jv.view_mut((0, 6), (3, n))
            .copy_from(&(r * &geo.com_jacobians[i]));
        accumulate(&mut m, &jv, &eye3, mass);

        // Angular velocity in the vehicle body frame:
        // w = E q_dot + axis * (alpha_1 + ... + alpha_i)_dot.
        let mut jw = DMatrix::zeros(3, dim);
        jw.fixed_view_mut::<3, 3>(0, 3).copy_from(&e);
        for k in 0..=i {
            jw.fixed_view_mut::<3, 1>(0, 6 + k).copy_from(&JOINT_AXIS);
        }
        let d = geo.directions[i];
        let rod_inertia = (eye3 - d * d.transpose()) * (mass * li * li / 12.0);
        accumulate(&mut m, &jw, &rod_inertia, 1.0);
    }

    // Point payload at the end effector.
    if params.payload_mass > 0.0 {
        let mut jv = DMatrix::zeros(3, dim);
        jv.fixed_view_mut::<3, 3>(0, 0).copy_from(&eye3);
        jv.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-r * hat(&geo.ee) * e));
        jv.view_mut((0, 6), (3, n))
            .copy_from(&(r * &geo.ee_jacobian));
        accumulate(&mut m, &jv, &eye3, params.payload_mass);
    }

    Ok(m)
}

/// Partials of M w.r.t. each generalized coordinate. M does not depend on
/// `p`, so the first three entries stay zero and are never evaluated.
fn mass_matrix_partials(
    coords: &GeneralizedCoords,
    params: &UamParams,
) -> Result<Vec<DMatrix<f64>>> {
    let dim = coords.dim();
    let h = CHRISTOFFEL_FD_STEP;
    let mut partials = vec![DMatrix::zeros(dim, dim); dim];
    let mut plus = coords.clone();
    let mut minus = coords.clone();
    for k in 3..dim {
        {
            let (qp, qm, ap, am) = (
                &mut plus.q,
                &mut minus.q,
                &mut plus.alpha,
                &mut minus.alpha,
            );
            if k < 6 {
                qp[k - 3] = coords.q[k - 3] + h;
                qm[k - 3] = coords.q[k - 3] - h;
            } else {
                ap[k - 6] = coords.alpha[k - 6] + h;
                am[k - 6] = coords.alpha[k - 6] - h;
            }
        }
        let mp = mass_matrix(&plus, params)?;
        let mm = mass_matrix(&minus, params)?;
        partials[k] = (mp - mm) / (2.0 * h);
        plus = coords.clone();
        minus = coords.clone();
    }
    Ok(partials)
}

/// Coriolis/centrifugal matrix C(chi, chi_dot) from Christoffel symbols:
///
/// ```text
///     C_ij = 1/2 sum_k ( dM_ij/dx_k + dM_ik/dx_j - dM_kj/dx_i ) chi_dot_k
/// ```
///
/// with the partials taken by central finite differences of the mass matrix.
/// The construction makes `dM/dt - 2C` skew-symmetric (up to the difference
/// step) and `C` linear in `chi_dot`.
pub fn coriolis_matrix(
    coords: &GeneralizedCoords,
    chi_dot: &DVector<f64>,
    params: &UamParams,
) -> Result<DMatrix<f64>> {
    let dim = coords.dim();
    if chi_dot.len() != dim {
        return Err(SimError::DimensionMismatch(format!(
            "chi_dot has {} entries, coordinates have {}",
            chi_dot.len(),
            dim
        )));
    }
    let partials = mass_matrix_partials(coords, params)?;
    let mut c = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = 0.0;
            for k in 0..dim {
                acc += (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(k, j)])
                    * chi_dot[k];
            }
            c[(i, j)] = 0.5 * acc;
        }
    }
    Ok(c)
}

/// First mass moment of arm plus payload in the body frame, kg m.
fn arm_first_moment(geo: &ArmGeometry, params: &UamParams) -> (Vector3<f64>, DMatrix<f64>) {
    let n = params.arm_dof();
    let mut h = Vector3::zeros();
    let mut dh = DMatrix::zeros(3, n);
    for i in 0..n {
        h += geo.coms[i] * params.arm_link_masses[i];
        dh += &geo.com_jacobians[i] * params.arm_link_masses[i];
    }
    if params.payload_mass > 0.0 {
        h += geo.ee * params.payload_mass;
        dh += &geo.ee_jacobian * params.payload_mass;
    }
    (h, dh)
}

/// Gravity vector g(chi) = dU/dchi for U = m_total g p_z + g e3^T R h(alpha),
/// where h is the first mass moment of the arm and payload about the vehicle
/// center of mass.
pub fn gravity_vector(coords: &GeneralizedCoords, params: &UamParams) -> Result<DVector<f64>> {
    let n = coords.arm_dof();
    if n != params.arm_dof() {
        return Err(SimError::DimensionMismatch(format!(
            "state has {} joints, params have {}",
            n,
            params.arm_dof()
        )));
    }
    check_pitch(&coords.q)?;
    let dim = 6 + n;
    let grav = params.gravity_accel;
    let r = rotation_matrix(&coords.q)?;
    let geo = arm_geometry(&coords.alpha, params);
    let (h, dh) = arm_first_moment(&geo, params);
    let dr = rotation_matrix_partials(&coords.q);

    let mut g = DVector::zeros(dim);
    g[2] = params.total_mass() * grav;
    for j in 0..3 {
        g[3 + j] = grav * (dr[j] * h).z;
    }
    let rh = r * dh;
    for k in 0..n {
        g[6 + k] = grav * rh[(2, k)];
    }
    Ok(g)
}

/// Potential energy with the world z = 0 plane as reference, J.
pub fn potential_energy(coords: &GeneralizedCoords, params: &UamParams) -> Result<f64> {
    let r = rotation_matrix(&coords.q)?;
    let geo = arm_geometry(&coords.alpha, params);
    let (h, _) = arm_first_moment(&geo, params);
    Ok(params.gravity_accel * (params.total_mass() * coords.p.z + (r * h).z))
}

/// Kinetic energy 1/2 chi_dot^T M chi_dot, J.
pub fn kinetic_energy(
    coords: &GeneralizedCoords,
    chi_dot: &DVector<f64>,
    params: &UamParams,
) -> Result<f64> {
    let m = mass_matrix(coords, params)?;
    Ok(0.5 * chi_dot.dot(&(&m * chi_dot)))
}

/// Solve `M chi_dd = tau - C chi_dot - g - d` for the acceleration.
///
/// `tau` and `d` are generalized forces with the coordinate layout. Uses a
/// Cholesky factorization; failure means the mass matrix lost positive
/// definiteness, which only happens for unphysical parameters.
pub fn forward_dynamics(
    state: &SystemState,
    tau: &DVector<f64>,
    d: &DVector<f64>,
    params: &UamParams,
) -> Result<DVector<f64>> {
    let dim = state.dim();
    if tau.len() != dim || d.len() != dim {
        return Err(SimError::DimensionMismatch(format!(
            "tau has {} entries, d has {}, state has {}",
            tau.len(),
            d.len(),
            dim
        )));
    }
    let m = mass_matrix(&state.coords, params)?;
    let c = coriolis_matrix(&state.coords, &state.chi_dot, params)?;
    let g = gravity_vector(&state.coords, params)?;
    let rhs = tau - &c * &state.chi_dot - g - d;
    let chol = nalgebra::Cholesky::new(m)
        .ok_or_else(|| SimError::LinearSolve("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}
