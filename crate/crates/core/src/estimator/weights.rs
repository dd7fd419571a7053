use nalgebra::{Matrix3, SMatrix};

use crate::error::{Error, Result};
use crate::sensors::NoiseSpec;
use crate::track::WindowPrior;

/// Square-root information matrices: `W Wᵀ = P⁻¹` for each covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSet {
    pub prior: SMatrix<f64, 9, 9>,
    pub gyro: Matrix3<f64>,
    pub accel: Matrix3<f64>,
    pub mag: Matrix3<f64>,
}

/// Lower Cholesky factor of the inverse of an SPD matrix.
fn sqrt_information<const N: usize>(cov: &SMatrix<f64, N, N>, what: &str) -> Result<SMatrix<f64, N, N>> {
    let inv = cov
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?
        .inverse();
    let inv = 0.5 * (inv + inv.transpose());
    inv.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("inverse of {what}")))
}

pub fn build_weights(prior: &WindowPrior, noise: &NoiseSpec) -> Result<WeightSet> {
    Ok(WeightSet {
        prior: sqrt_information(&prior.cov, "prior covariance")?,
        gyro: sqrt_information(&noise.gyro_cov, "gyro covariance")?,
        accel: sqrt_information(&noise.accel_cov, "accelerometer covariance")?,
        mag: sqrt_information(&noise.mag_cov, "magnetometer covariance")?,
    })
}
