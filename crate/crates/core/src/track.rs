//! State, prior and per-sample track types shared by all estimators.

use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::Quaternion;

/// Covariance over the error state `[δψ, δb_a, δb_g]`.
pub type ErrorStateCov = SMatrix<f64, 9, 9>;

/// Initial condition of a window (or of a filter run).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPrior {
    pub q0: Quaternion,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub cov: ErrorStateCov,
}

impl WindowPrior {
    /// Prior with a block-diagonal covariance from per-axis standard
    /// deviations: attitude (rad, navigation axes), accelerometer bias and
    /// gyro bias.
    pub fn from_sigmas(
        q0: Quaternion,
        accel_bias: Vector3<f64>,
        gyro_bias: Vector3<f64>,
        attitude_sigma: Vector3<f64>,
        accel_bias_sigma: Vector3<f64>,
        gyro_bias_sigma: Vector3<f64>,
    ) -> Self {
        let mut cov = ErrorStateCov::zeros();
        for i in 0..3 {
            cov[(i, i)] = attitude_sigma[i].powi(2);
            cov[(3 + i, 3 + i)] = accel_bias_sigma[i].powi(2);
            cov[(6 + i, 6 + i)] = gyro_bias_sigma[i].powi(2);
        }
        Self {
            q0,
            accel_bias,
            gyro_bias,
            cov,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.q0.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "prior quaternion norm {} is not unit",
                self.q0.norm()
            )));
        }
        if self.cov.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("prior covariance".into()));
        }
        Ok(())
    }
}

/// Estimated state at one sample instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateState {
    pub t: f64,
    pub q: Quaternion,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub cov: ErrorStateCov,
}

/// Solver summary for one window of a sliding run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub constraint_violation: f64,
}

/// Per-sample estimates of a full run plus per-window diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateTrack {
    pub states: Vec<EstimateState>,
    pub windows: Vec<WindowDiagnostics>,
}

impl EstimateTrack {
    pub fn converged(&self) -> bool {
        self.windows.iter().all(|w| w.converged)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Symmetrizes a covariance in place.
pub(crate) fn symmetrize<const N: usize>(p: &mut SMatrix<f64, N, N>) {
    let t = p.transpose();
    *p = 0.5 * (*p + t);
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<const N: usize>(p: &SMatrix<f64, N, N>) -> f64 {
    nalgebra::DMatrix::from_column_slice(N, N, p.as_slice())
        .symmetric_eigenvalues()
        .min()
}

/// Checks symmetry within `1e-10` (relative to the largest entry) and
/// eigenvalues above `-1e-12` (likewise relative).
pub fn is_valid_covariance<const N: usize>(p: &SMatrix<f64, N, N>) -> bool {
    let scale = p.amax().max(1e-300);
    (p - p.transpose()).amax() <= 1e-10 * scale && min_eigenvalue(p) >= -1e-12 * scale
}
