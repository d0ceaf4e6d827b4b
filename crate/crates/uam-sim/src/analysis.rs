//! Post-run analysis: tracking metrics, boundedness checks, controller
//! comparison, and a self-contained model verification suite.
//!
//! Tracking errors here are plain differences between recorded state and
//! recorded reference (`chi - chi_desired`), uniform across controllers so
//! traces stay comparable regardless of how a controller defines its
//! internal error signal.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::Serialize;

use crate::control::{build_companion, max_real_eigenvalue, solve_lyapunov};
use crate::dynamics::{
    coriolis_matrix, forward_dynamics, gravity_vector, mass_matrix, GeneralizedCoords,
    SystemState, UamParams,
};
use crate::sim::{RunOutcome, SimTrace, TraceRecord};
use crate::{Result, SimError};

/// Per-channel scalar metric split by subsystem group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMetric {
    /// x, y, z, m.
    pub position: [f64; 3],
    /// roll, pitch, yaw, rad.
    pub attitude: [f64; 3],
    /// joints, rad.
    pub arm: Vec<f64>,
}

impl ChannelMetric {
    fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            position: [v[0], v[1], v[2]],
            attitude: [v[3], v[4], v[5]],
            arm: v.iter().skip(6).copied().collect(),
        }
    }
}

fn window<'a>(trace: &'a SimTrace, t_start: f64, t_end: f64) -> Result<Vec<&'a TraceRecord>> {
    let recs: Vec<_> = trace
        .records
        .iter()
        .filter(|r| r.t >= t_start && r.t <= t_end)
        .collect();
    if recs.is_empty() {
        return Err(SimError::EmptyWindow {
            start: t_start,
            end: t_end,
        });
    }
    Ok(recs)
}

/// Root-mean-square of `chi - chi_desired` per coordinate over a window.
pub fn rms_errors(trace: &SimTrace, t_start: f64, t_end: f64) -> Result<ChannelMetric> {
    let recs = window(trace, t_start, t_end)?;
    let dim = recs[0].chi.len();
    let mut acc = DVector::zeros(dim);
    for r in &recs {
        let e = &r.chi - &r.desired_chi;
        acc += e.component_mul(&e);
    }
    acc /= recs.len() as f64;
    Ok(ChannelMetric::from_vector(&acc.map(f64::sqrt)))
}

/// Maximum absolute `chi - chi_desired` per coordinate over a window.
pub fn max_abs_errors(trace: &SimTrace, t_start: f64, t_end: f64) -> Result<ChannelMetric> {
    let recs = window(trace, t_start, t_end)?;
    let dim = recs[0].chi.len();
    let mut acc = DVector::<f64>::zeros(dim);
    for r in &recs {
        let e = &r.chi - &r.desired_chi;
        for k in 0..dim {
            acc[k] = acc[k].max(e[k].abs());
        }
    }
    Ok(ChannelMetric::from_vector(&acc))
}

/// Result of the ultimate-boundedness check: after the settle time every
/// position axis must stay inside `position_band` (m) and every joint
/// inside `arm_band` (rad).
#[derive(Debug, Clone, Serialize)]
pub struct UubReport {
    pub settle_time: f64,
    pub position_band: f64,
    pub arm_band: f64,
    /// Worst post-settle excursion per channel.
    pub worst: ChannelMetric,
    pub position_ok: bool,
    pub arm_ok: bool,
}

impl UubReport {
    pub fn satisfied(&self) -> bool {
        self.position_ok && self.arm_ok
    }
}

/// Check ultimate boundedness of the tracking error on a completed run.
pub fn uub_check(
    trace: &SimTrace,
    settle_time: f64,
    position_band: f64,
    arm_band: f64,
) -> Result<UubReport> {
    let worst = max_abs_errors(trace, settle_time, trace.duration)?;
    let position_ok = worst.position.iter().all(|e| *e <= position_band);
    let arm_ok = worst.arm.iter().all(|e| *e <= arm_band);
    Ok(UubReport {
        settle_time,
        position_band,
        arm_band,
        worst,
        position_ok,
        arm_ok,
    })
}

/// Lyapunov-function trajectory V(t) = xi^T P xi for one coordinate block,
/// built from the recorded errors and reference rates.
pub fn lyapunov_series(
    trace: &SimTrace,
    first_coord: usize,
    block_dim: usize,
    p: &DMatrix<f64>,
) -> Result<Vec<(f64, f64)>> {
    if p.nrows() != 2 * block_dim || p.ncols() != 2 * block_dim {
        return Err(SimError::DimensionMismatch(format!(
            "P must be {0}x{0} for a block of dimension {1}",
            2 * block_dim,
            block_dim
        )));
    }
    let mut out = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let mut xi = DVector::zeros(2 * block_dim);
        for k in 0..block_dim {
            xi[k] = r.chi[first_coord + k] - r.desired_chi[first_coord + k];
            xi[block_dim + k] = r.chi_dot[first_coord + k] - r.desired_rate[first_coord + k];
        }
        out.push((r.t, xi.dot(&(p * &xi))));
    }
    Ok(out)
}

/// Boundedness heuristic on a Lyapunov trajectory: estimate the steady
/// bound as the largest value over the first quarter of the post-settle
/// window, and flag the trajectory if it later exceeds `factor` times that
/// bound. A diverging V trips this long before the state ceiling does,
/// while a bounded oscillation stays within a modest factor of its early
/// peaks.
pub fn lyapunov_bounded(series: &[(f64, f64)], settle_time: f64, factor: f64) -> bool {
    if series.is_empty() {
        return false;
    }
    let t_end = series.last().unwrap().0;
    let ref_end = settle_time + 0.25 * (t_end - settle_time).max(0.0);
    let bound = series
        .iter()
        .filter(|(t, _)| *t >= settle_time && *t <= ref_end)
        .map(|(_, v)| *v)
        .fold(0.0f64, f64::max);
    series
        .iter()
        .filter(|(t, _)| *t >= settle_time)
        .all(|(_, v)| *v <= factor * bound.max(f64::MIN_POSITIVE))
}

/// Relative improvement of `ours` over `other` in percent:
/// `(other - ours) / other * 100`. Positive when ours is smaller.
pub fn reduction_percent(other: f64, ours: f64) -> f64 {
    (other - ours) / other * 100.0
}

/// Side-by-side tracking comparison of two runs of the same mission.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub proposed_outcome: RunOutcome,
    pub baseline_outcome: RunOutcome,
    pub proposed_rms: ChannelMetric,
    pub baseline_rms: ChannelMetric,
    /// Reduction of the modular controller's RMS over the baseline's, %.
    pub reduction_pct: ChannelMetric,
    /// Combined position metric: RMS of |e_p| over the window, m.
    pub proposed_position_rms: f64,
    pub baseline_position_rms: f64,
    /// Reduction of the combined position metric, %.
    pub position_reduction_pct: f64,
}

/// RMS of the position-error norm over a window.
fn position_rms_norm(trace: &SimTrace, t_start: f64, t_end: f64) -> Result<f64> {
    let recs = window(trace, t_start, t_end)?;
    let mut acc = 0.0;
    for r in &recs {
        let e = Vector3::new(
            r.chi[0] - r.desired_chi[0],
            r.chi[1] - r.desired_chi[1],
            r.chi[2] - r.desired_chi[2],
        );
        acc += e.norm_squared();
    }
    Ok((acc / recs.len() as f64).sqrt())
}

/// Compare two traces of the same mission over a common window.
pub fn compare_traces(
    proposed: &SimTrace,
    baseline: &SimTrace,
    t_start: f64,
    t_end: f64,
) -> Result<CompareReport> {
    if proposed.arm_dof != baseline.arm_dof {
        return Err(SimError::IncomparableTraces(format!(
            "arm dimension differs: {} vs {}",
            proposed.arm_dof, baseline.arm_dof
        )));
    }
    if (proposed.duration - baseline.duration).abs() > 1e-9 {
        return Err(SimError::IncomparableTraces(format!(
            "durations differ: {} vs {}",
            proposed.duration, baseline.duration
        )));
    }
    let p_rms = rms_errors(proposed, t_start, t_end)?;
    let b_rms = rms_errors(baseline, t_start, t_end)?;
    let reduction = ChannelMetric {
        position: std::array::from_fn(|i| reduction_percent(b_rms.position[i], p_rms.position[i])),
        attitude: std::array::from_fn(|i| reduction_percent(b_rms.attitude[i], p_rms.attitude[i])),
        arm: p_rms
            .arm
            .iter()
            .zip(b_rms.arm.iter())
            .map(|(p, b)| reduction_percent(*b, *p))
            .collect(),
    };
    let p_pos = position_rms_norm(proposed, t_start, t_end)?;
    let b_pos = position_rms_norm(baseline, t_start, t_end)?;
    Ok(CompareReport {
        proposed_outcome: proposed.outcome.clone(),
        baseline_outcome: baseline.outcome.clone(),
        proposed_rms: p_rms,
        baseline_rms: b_rms,
        reduction_pct: reduction,
        proposed_position_rms: p_pos,
        baseline_position_rms: b_pos,
        position_reduction_pct: reduction_percent(b_pos, p_pos),
    })
}

/// Summary of one run, serialized next to the trace.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub controller: String,
    pub outcome: RunOutcome,
    pub duration: f64,
    pub samples: usize,
    /// Metrics over the post-settle window.
    pub settle_time: f64,
    pub rms: ChannelMetric,
    pub max_abs: ChannelMetric,
    pub final_gains: Vec<GainSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainSummary {
    pub subsystem: String,
    pub k: [f64; 4],
    pub zeta: f64,
    pub rho: f64,
}

/// Build the run summary. `settle_time` bounds the metric window from
/// below; a diverged run is summarized over whatever was recorded.
pub fn summarize(trace: &SimTrace, settle_time: f64) -> Result<RunSummary> {
    let t_end = trace
        .records
        .last()
        .map(|r| r.t)
        .unwrap_or(trace.duration);
    let start = settle_time.min(t_end);
    let rms = rms_errors(trace, start, t_end)?;
    let max_abs = max_abs_errors(trace, start, t_end)?;
    let final_gains = trace
        .records
        .last()
        .map(|r| {
            r.gains
                .iter()
                .map(|g| GainSummary {
                    subsystem: g.name.to_string(),
                    k: g.gains.k,
                    zeta: g.gains.zeta,
                    rho: g.rho,
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(RunSummary {
        controller: trace.controller.clone(),
        outcome: trace.outcome.clone(),
        duration: trace.duration,
        samples: trace.records.len(),
        settle_time: start,
        rms,
        max_abs,
        final_gains,
    })
}

/// One named check of the verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Structural verification of the dynamic model and the control algebra;
/// everything here must hold for any valid parameter set. Returns one entry
/// per check; the caller decides how to report failures.
pub fn verify_model(params: &UamParams, seed: u64) -> Result<Vec<VerificationCheck>> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    params.validate()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let n = params.arm_dof();
    let dim = params.dim();
    let mut checks = Vec::new();

    let sample_coords = |rng: &mut StdRng| {
        GeneralizedCoords::new(
            Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
            Vector3::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-3.0..3.0),
            ),
            DVector::from_fn(n, |_, _| rng.gen_range(-2.5..2.5)),
        )
    };

    // Mass matrix structure.
    let mut worst_asym = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..100 {
        let c = sample_coords(&mut rng);
        let m = mass_matrix(&c, params)?;
        worst_asym = worst_asym.max((&m - m.transpose()).amax());
        min_eig = min_eig.min(m.symmetric_eigenvalues().min());
    }
    checks.push(VerificationCheck {
        name: "mass matrix symmetric".into(),
        passed: worst_asym <= 1e-12,
        detail: format!("worst asymmetry {worst_asym:.3e}"),
    });
    checks.push(VerificationCheck {
        name: "mass matrix positive definite".into(),
        passed: min_eig > 0.0,
        detail: format!("smallest eigenvalue {min_eig:.3e}"),
    });

    // Energy-rate structure: xi^T (dM/dt - 2C) xi = 0.
    let mut worst_skew = 0.0f64;
    for _ in 0..50 {
        let c = sample_coords(&mut rng);
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.5..1.5));
        let cm = coriolis_matrix(&c, &v, params)?;
        let h = 1e-5;
        let chi = c.to_vector();
        let plus = GeneralizedCoords::from_vector(&(&chi + &v * h))?;
        let minus = GeneralizedCoords::from_vector(&(&chi - &v * h))?;
        let m_dot = (mass_matrix(&plus, params)? - mass_matrix(&minus, params)?) / (2.0 * h);
        let xi = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        worst_skew = worst_skew.max(xi.dot(&((m_dot - 2.0 * &cm) * &xi)).abs());
    }
    checks.push(VerificationCheck {
        name: "mass rate minus twice Coriolis is skew".into(),
        passed: worst_skew <= 1e-8,
        detail: format!("worst quadratic form {worst_skew:.3e}"),
    });

    // Forward dynamics consistency.
    let mut worst_res = 0.0f64;
    for _ in 0..20 {
        let c = sample_coords(&mut rng);
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.5..1.5));
        let state = SystemState {
            coords: c.clone(),
            chi_dot: v.clone(),
            chi_ddot_prev: DVector::zeros(dim),
            t: 0.0,
        };
        let tau = DVector::from_fn(dim, |_, _| rng.gen_range(-5.0..5.0));
        let d = DVector::from_fn(dim, |_, _| rng.gen_range(-0.2..0.2));
        let acc = forward_dynamics(&state, &tau, &d, params)?;
        let res = mass_matrix(&c, params)? * acc
            + coriolis_matrix(&c, &v, params)? * &v
            + gravity_vector(&c, params)?
            + &d
            - &tau;
        worst_res = worst_res.max(res.amax());
    }
    checks.push(VerificationCheck {
        name: "forward dynamics residual".into(),
        passed: worst_res <= 1e-10,
        detail: format!("worst residual {worst_res:.3e}"),
    });

    // Gravity is the gradient of the potential.
    let mut worst_grad = 0.0f64;
    for _ in 0..10 {
        let c = sample_coords(&mut rng);
        let g = gravity_vector(&c, params)?;
        let chi = c.to_vector();
        let h = 1e-6;
        for k in 0..dim {
            let mut cp = chi.clone();
            let mut cm = chi.clone();
            cp[k] += h;
            cm[k] -= h;
            let up = crate::dynamics::potential_energy(
                &GeneralizedCoords::from_vector(&cp)?,
                params,
            )?;
            let um = crate::dynamics::potential_energy(
                &GeneralizedCoords::from_vector(&cm)?,
                params,
            )?;
            worst_grad = worst_grad.max((g[k] - (up - um) / (2.0 * h)).abs());
        }
    }
    checks.push(VerificationCheck {
        name: "gravity matches potential gradient".into(),
        passed: worst_grad <= 1e-6,
        detail: format!("worst deviation {worst_grad:.3e}"),
    });

    // Control algebra: a representative spread of subsystem scales must
    // yield Hurwitz companions and tight Lyapunov solves.
    let mut worst_lyap = 0.0f64;
    let mut worst_re = f64::NEG_INFINITY;
    for (l1, l2) in [
        (vec![2.0, 2.0, 4.0], vec![1.0, 1.0, 2.0]),
        (vec![4.0, 4.0, 4.0], vec![2.0, 2.0, 2.0]),
        (vec![3.0, 3.0], vec![1.5, 1.5]),
    ] {
        let d = l1.len();
        let a = build_companion(
            &DMatrix::from_diagonal(&DVector::from_vec(l1)),
            &DMatrix::from_diagonal(&DVector::from_vec(l2)),
        );
        worst_re = worst_re.max(max_real_eigenvalue(&a));
        let q = DMatrix::identity(2 * d, 2 * d);
        let p = solve_lyapunov(&a, &q)?;
        worst_lyap = worst_lyap.max((a.transpose() * &p + &p * &a + q).amax());
    }
    checks.push(VerificationCheck {
        name: "error dynamics Hurwitz".into(),
        passed: worst_re < -1e-9,
        detail: format!("largest real part {worst_re:.3e}"),
    });
    checks.push(VerificationCheck {
        name: "Lyapunov solve residual".into(),
        passed: worst_lyap <= 1e-10,
        detail: format!("worst residual {worst_lyap:.3e}"),
    });

    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::AdaptiveGains;
    use crate::sim::GainRecord;
    use approx::assert_relative_eq;

    /// Trace with a known constant error pattern for metric checks.
    fn synthetic_trace(err_scale: f64) -> SimTrace {
        let dim = 8;
        let records = (0..101)
            .map(|k| {
                let t = k as f64 * 0.1;
                let desired = DVector::from_element(dim, 1.0);
                // Alternating +-err_scale error: RMS = |err_scale|, max = |err_scale|.
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let chi = &desired + DVector::from_element(dim, sign * err_scale);
                TraceRecord {
                    t,
                    chi,
                    chi_dot: DVector::zeros(dim),
                    desired_chi: desired.clone(),
                    desired_rate: DVector::zeros(dim),
                    error: DVector::zeros(dim),
                    sliding: DVector::zeros(dim),
                    gains: vec![GainRecord {
                        name: "all",
                        gains: AdaptiveGains::new([0.01; 4], 0.1),
                        rho: 0.1,
                    }],
                    tau: DVector::zeros(dim),
                    thrust: 0.0,
                }
            })
            .collect();
        SimTrace {
            controller: "synthetic".into(),
            arm_dof: 2,
            records,
            outcome: RunOutcome::Completed,
            duration: 10.0,
        }
    }

    #[test]
    fn rms_of_alternating_error_is_its_magnitude() {
        let trace = synthetic_trace(0.05);
        let rms = rms_errors(&trace, 0.0, 10.0).unwrap();
        for v in rms.position.iter().chain(rms.attitude.iter()) {
            assert_relative_eq!(*v, 0.05, epsilon = 1e-12);
        }
        assert_eq!(rms.arm.len(), 2);
        let worst = max_abs_errors(&trace, 0.0, 10.0).unwrap();
        assert_relative_eq!(worst.position[0], 0.05, epsilon = 1e-12);
    }

    #[test]
    fn empty_window_is_an_error() {
        let trace = synthetic_trace(0.01);
        assert!(matches!(
            rms_errors(&trace, 20.0, 30.0),
            Err(SimError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn uub_check_bands() {
        let trace = synthetic_trace(0.05);
        let ok = uub_check(&trace, 1.0, 0.15, 0.0873).unwrap();
        assert!(ok.satisfied());
        let tight = uub_check(&trace, 1.0, 0.04, 0.0873).unwrap();
        assert!(!tight.position_ok);
        assert!(!tight.satisfied());
    }

    #[test]
    fn reduction_percent_arithmetic() {
        // Hand values: (0.15 - 0.05) / 0.15 = 66.67%; (0.08 - 0.02)/0.08 = 75%.
        assert_relative_eq!(
            reduction_percent(0.15, 0.05),
            100.0 / 1.5,
            epsilon = 1e-12
        );
        assert_relative_eq!(reduction_percent(0.08, 0.02), 75.0, epsilon = 1e-12);
        // Negative when ours is worse.
        assert!(reduction_percent(0.05, 0.06) < 0.0);
    }

    #[test]
    fn compare_requires_matching_traces() {
        let a = synthetic_trace(0.05);
        let mut b = synthetic_trace(0.10);
        b.arm_dof = 3;
        assert!(matches!(
            compare_traces(&a, &b, 0.0, 10.0),
            Err(SimError::IncomparableTraces(_))
        ));
        let b = synthetic_trace(0.10);
        let report = compare_traces(&a, &b, 0.0, 10.0).unwrap();
        assert_relative_eq!(report.reduction_pct.position[0], 50.0, epsilon = 1e-9);
        assert_relative_eq!(report.position_reduction_pct, 50.0, epsilon = 1e-9);
    }

    #[test]
    fn lyapunov_series_and_boundedness() {
        let trace = synthetic_trace(0.05);
        let p = DMatrix::identity(6, 6);
        let series = lyapunov_series(&trace, 0, 3, &p).unwrap();
        assert_eq!(series.len(), 101);
        // Constant-magnitude error: V is flat, trivially bounded.
        assert!(lyapunov_bounded(&series, 1.0, 10.0));
        // A sharply growing tail is flagged.
        let mut growing = series.clone();
        let len = growing.len();
        for (i, (_, v)) in growing.iter_mut().enumerate() {
            *v *= ((i as f64 / len as f64) * 12.0).exp();
        }
        assert!(!lyapunov_bounded(&growing, 1.0, 10.0));
    }

    #[test]
    fn verification_suite_passes_on_defaults() {
        let checks = verify_model(&UamParams::default(), 7).unwrap();
        assert!(checks.len() >= 6);
        for c in &checks {
            assert!(c.passed, "{} failed: {}", c.name, c.detail);
        }
    }

    #[test]
    fn summary_reports_metrics_and_gains() {
        let trace = synthetic_trace(0.05);
        let s = summarize(&trace, 1.0).unwrap();
        assert_eq!(s.controller, "synthetic");
        assert_eq!(s.samples, 101);
        assert_relative_eq!(s.rms.position[0], 0.05, epsilon = 1e-12);
        assert_eq!(s.final_gains.len(), 1);
        assert_eq!(s.final_gains[0].subsystem, "all");
    }
}
