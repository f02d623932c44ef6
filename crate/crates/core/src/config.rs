//! Numerical tolerances shared by every module.

use serde::{Deserialize, Serialize};

/// Tolerance record. Every threshold used by the library is read from here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Unit-norm, orthogonality and mass-balance checks.
    pub geometric: f64,
    /// Eigenvalue threshold, relative to the matrix max-abs entry.
    pub eigen_relative: f64,
    /// Number of standard errors allowed for Monte Carlo comparisons.
    pub mc_sigmas: f64,
    /// Coefficients of witness measures below this magnitude are dropped.
    pub witness_truncation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            geometric: 1e-12,
            eigen_relative: 1e-9,
            mc_sigmas: 4.0,
            witness_truncation: 1e-12,
        }
    }
}

impl Tolerances {
    /// Multiplies every tolerance by `factor` (the `--tol-scale` flag).
    pub fn scaled(self, factor: f64) -> Self {
        Tolerances {
            geometric: self.geometric * factor,
            eigen_relative: self.eigen_relative * factor,
            mc_sigmas: self.mc_sigmas * factor,
            witness_truncation: self.witness_truncation,
        }
    }
}
