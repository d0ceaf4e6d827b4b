//! Online estimation of the robust-gain magnitude for one subsystem.
//!
//! The lumped uncertainty acting on a subsystem (coupling forces from the
//! rest of the vehicle, disturbances, payload changes) is unknown but grows
//! at most quadratically with the stacked tracking error `xi = [e; e_dot]`
//! and linearly with the most recent acceleration. The robust-term
//! magnitude is therefore parameterized as
//!
//! ```text
//!     rho = K_0 + K_1 |xi| + K_2 |xi|^2 + K_3 |acc| + zeta
//! ```
//!
//! with every coefficient adapted online from the sliding variable `r`:
//!
//! ```text
//!     K_i' = |r| |xi|^i - nu_i K_i          (i = 0, 1, 2)
//!     K_3' = |r| |acc|  - nu_3 K_3
//! ```
//!
//! The leakage terms `-nu_i K_i` keep the estimates bounded; the drive
//! terms grow them exactly when the sliding variable shows the uncertainty
//! is not yet dominated. The auxiliary floor `zeta` keeps `rho` strictly
//! positive inside the boundary layer, where `|r|` alone can no longer
//! certify convergence:
//!
//! ```text
//!     zeta' = 0                                          if |r| >= varpi
//!     zeta' = -( 1 + ( K_3 |acc| + sum_i K_i |xi|^i ) |r| ) zeta + epsilon
//!                                                        otherwise
//! ```
//!
//! Integration is explicit Euler at the control rate with projection:
//! the `K_i` are clamped at zero and `zeta` at `epsilon * dt`, so every
//! estimate stays in its admissible set regardless of step size.

use serde::{Deserialize, Serialize};

/// Fixed coefficients of the adaptation law for one subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    /// Leakage rate for each of the four gain estimates, 1/s.
    pub nu: [f64; 4],
    /// Drive of the auxiliary floor dynamics.
    pub epsilon: f64,
    /// Boundary-layer width; must match the robust term's.
    pub varpi: f64,
}

/// Time derivatives of the estimates at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainDerivatives {
    pub k_dot: [f64; 4],
    pub zeta_dot: f64,
}

/// Adaptive estimates for one subsystem: four gain coefficients and the
/// auxiliary floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveGains {
    /// K_0..K_3: constant, |xi|, |xi|^2, and |acc| coefficients.
    pub k: [f64; 4],
    /// Auxiliary floor keeping rho positive in the boundary layer.
    pub zeta: f64,
}

impl AdaptiveGains {
    pub fn new(k: [f64; 4], zeta: f64) -> Self {
        Self { k, zeta }
    }

    /// Robust-term magnitude `rho` for the current error and acceleration
    /// norms. The `|xi|^0` term is the constant 1 by definition.
    pub fn rho(&self, xi_norm: f64, acc_norm: f64) -> f64 {
        self.k[0] + self.k[1] * xi_norm + self.k[2] * xi_norm * xi_norm + self.k[3] * acc_norm
            + self.zeta
    }

    /// Right-hand side of the adaptation law.
    pub fn derivatives(
        &self,
        r_norm: f64,
        xi_norm: f64,
        acc_norm: f64,
        params: &AdaptationParams,
    ) -> GainDerivatives {
        let xi_pow = [1.0, xi_norm, xi_norm * xi_norm];
        let k_dot = [
            r_norm * xi_pow[0] - params.nu[0] * self.k[0],
            r_norm * xi_pow[1] - params.nu[1] * self.k[1],
            r_norm * xi_pow[2] - params.nu[2] * self.k[2],
            r_norm * acc_norm - params.nu[3] * self.k[3],
        ];
        let zeta_dot = if r_norm >= params.varpi {
            0.0
        } else {
            let weighted = self.k[3] * acc_norm
                + self.k[0] * xi_pow[0]
                + self.k[1] * xi_pow[1]
                + self.k[2] * xi_pow[2];
            -(1.0 + weighted * r_norm) * self.zeta + params.epsilon
        };
        GainDerivatives { k_dot, zeta_dot }
    }

    /// One explicit Euler step with projection onto the admissible set:
    /// gains stay non-negative, the floor stays at or above `epsilon * dt`.
    pub fn step(
        &mut self,
        dt: f64,
        r_norm: f64,
        xi_norm: f64,
        acc_norm: f64,
        params: &AdaptationParams,
    ) {
        let d = self.derivatives(r_norm, xi_norm, acc_norm, params);
        for i in 0..4 {
            self.k[i] = (self.k[i] + dt * d.k_dot[i]).max(0.0);
        }
        self.zeta = (self.zeta + dt * d.zeta_dot).max(params.epsilon * dt);
    }

    /// Admissibility invariant: gains non-negative, floor strictly positive.
    pub fn bounds_ok(&self) -> bool {
        self.k.iter().all(|&k| k >= 0.0) && self.zeta > 0.0
    }
}
