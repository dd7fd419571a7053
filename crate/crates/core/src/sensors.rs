//! Sensor measurement models, Earth environment and disturbance detectors.
//!
//! The navigation frame is North-Up-East.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{conj_rotate, quat_left_matrix, Quaternion};

pub const STANDARD_GRAVITY: f64 = 9.80665;
pub const EARTH_RATE: f64 = 7.2921151467e-5;

/// Scalar part of `2 q* ∘ q̇` tolerated on unit-norm paths (leaves room for
/// finite-difference derivatives).
const NORM_RATE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarthModel {
    /// Geodetic latitude (rad).
    pub latitude: f64,
    /// Gravity magnitude (m/s²).
    pub gravity: f64,
    /// Earth rotation rate (rad/s).
    pub earth_rate: f64,
    /// Magnetic declination (rad).
    pub mag_declination: f64,
    /// Magnetic inclination (rad).
    pub mag_inclination: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        Self {
            latitude: 28f64.to_radians(),
            gravity: STANDARD_GRAVITY,
            earth_rate: EARTH_RATE,
            mag_declination: (-5f64).to_radians(),
            mag_inclination: 45f64.to_radians(),
        }
    }
}

impl EarthModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gravity > 0.0) {
            return Err(Error::domain("gravity must be positive"));
        }
        if !(self.earth_rate >= 0.0) {
            return Err(Error::domain("earth rate must be non-negative"));
        }
        Ok(())
    }

    /// Same model with the Earth rate switched off.
    pub fn without_earth_rate(mut self) -> Self {
        self.earth_rate = 0.0;
        self
    }
}

/// Measurement covariances and bias random-walk spectral densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Discrete gyro sample covariance (rad²/s²).
    pub gyro_cov: Matrix3<f64>,
    /// Accelerometer sample covariance (m²/s⁴).
    pub accel_cov: Matrix3<f64>,
    /// Magnetometer sample covariance (normalized units).
    pub mag_cov: Matrix3<f64>,
    /// Gyro bias random-walk PSD (rad²/s³).
    pub gyro_bias_psd: Matrix3<f64>,
    /// Accelerometer bias random-walk PSD (m²/s⁵).
    pub accel_bias_psd: Matrix3<f64>,
}

impl NoiseSpec {
    /// Isotropic noise from a gyro root PSD (rad/√s) at `sample_rate` and
    /// per-axis accelerometer and magnetometer standard deviations.
    pub fn isotropic(gyro_root_psd: f64, sample_rate: f64, accel_std: f64, mag_std: f64) -> Self {
        Self {
            gyro_cov: Matrix3::identity() * gyro_root_psd * gyro_root_psd * sample_rate,
            accel_cov: Matrix3::identity() * accel_std * accel_std,
            mag_cov: Matrix3::identity() * mag_std * mag_std,
            gyro_bias_psd: Matrix3::zeros(),
            accel_bias_psd: Matrix3::zeros(),
        }
    }

    /// Gyro 1 deg/√h, accelerometer 0.01 m/s², magnetometer 0.02 at 100 Hz.
    pub fn reference(sample_rate: f64) -> Self {
        Self::isotropic(1f64.to_radians() / 60.0, sample_rate, 0.01, 0.02)
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::reference(100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Accelerometer norm tolerance (m/s²).
    pub eps_a: f64,
    /// Magnetometer norm tolerance.
    pub eps_m: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            eps_a: 0.3,
            eps_m: 0.05,
        }
    }
}

/// One synchronized inertial-magnetic sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
    pub mag: Vector3<f64>,
    pub accel_valid: bool,
    pub mag_valid: bool,
}

impl ImuSample {
    /// Builds a sample with validity flags from the detectors.
    pub fn detect(
        t: f64,
        gyro: Vector3<f64>,
        accel: Vector3<f64>,
        mag: Vector3<f64>,
        model: &EarthModel,
        cfg: &DetectorConfig,
    ) -> Self {
        Self {
            t,
            gyro,
            accel,
            mag,
            accel_valid: accel_detector(&accel, model, cfg),
            mag_valid: mag_detector(&mag, cfg),
        }
    }

    /// Re-evaluates the validity flags.
    pub fn redetect(&mut self, model: &EarthModel, cfg: &DetectorConfig) {
        self.accel_valid = accel_detector(&self.accel, model, cfg);
        self.mag_valid = mag_detector(&self.mag, cfg);
    }
}

/// Gravitational acceleration `[0, -g, 0]` in the navigation frame.
pub fn gravity_n(model: &EarthModel) -> Vector3<f64> {
    Vector3::new(0.0, -model.gravity, 0.0)
}

pub fn earth_rate_n(model: &EarthModel) -> Vector3<f64> {
    let (s, c) = model.latitude.sin_cos();
    Vector3::new(model.earth_rate * c, model.earth_rate * s, 0.0)
}

/// Unit magnetic field direction in the navigation frame.
pub fn mag_field_n(model: &EarthModel) -> Vector3<f64> {
    let (sd, cd) = model.mag_declination.sin_cos();
    let (si, ci) = model.mag_inclination.sin_cos();
    Vector3::new(cd * ci, -si, sd * ci)
}

pub fn accel_detector(y_a: &Vector3<f64>, model: &EarthModel, cfg: &DetectorConfig) -> bool {
    (y_a.norm() - model.gravity).abs() < cfg.eps_a
}

pub fn mag_detector(y_m: &Vector3<f64>, cfg: &DetectorConfig) -> bool {
    (1.0 - y_m.norm()).abs() < cfg.eps_m
}

/// Vector part of `2 q* ∘ q̇` for a raw quaternion and its time derivative.
pub fn body_rate(q: &Vector4<f64>, q_dot: &Vector4<f64>) -> Vector4<f64> {
    let q_conj = Vector4::new(q[0], -q[1], -q[2], -q[3]);
    2.0 * quat_left_matrix(&q_conj) * q_dot
}

/// Angular rate a gyro reads on the path `q(t)` with derivative `q̇`.
pub fn predict_gyro(
    q: &Quaternion,
    q_dot: &Vector4<f64>,
    b_g: &Vector3<f64>,
    model: &EarthModel,
) -> Vector3<f64> {
    let qv = q.to_vec4();
    let rate = body_rate(&qv, q_dot);
    debug_assert!(
        (q.norm() - 1.0).abs() > 1e-6 || rate[0].abs() < NORM_RATE_TOLERANCE * (1.0 + q_dot.norm()),
        "q̇ is not tangent to the unit sphere"
    );
    rate.fixed_rows::<3>(1).into_owned() + conj_rotate(&qv, &earth_rate_n(model)) + b_g
}

pub fn predict_accel(q: &Quaternion, b_a: &Vector3<f64>, model: &EarthModel) -> Vector3<f64> {
    -q.rotate(&gravity_n(model)) + b_a
}

pub fn predict_mag(q: &Quaternion, model: &EarthModel) -> Vector3<f64> {
    q.rotate(&mag_field_n(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::quat_mul;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn no_rate() -> EarthModel {
        EarthModel::default().without_earth_rate()
    }

    #[test]
    fn gravity_examples() {
        let m = EarthModel::default();
        assert_eq!(gravity_n(&m), Vector3::new(0.0, -9.80665, 0.0));
        assert_relative_eq!(gravity_n(&m).norm(), m.gravity);
        let flat = EarthModel { gravity: 0.0, ..m };
        assert_eq!(gravity_n(&flat), Vector3::zeros());
        assert!(flat.validate().is_err());
    }

    #[test]
    fn earth_rate_examples() {
        let mut m = EarthModel { latitude: 0.0, ..Default::default() };
        assert_relative_eq!(earth_rate_n(&m), Vector3::new(EARTH_RATE, 0.0, 0.0));
        m.latitude = std::f64::consts::FRAC_PI_2;
        assert_relative_eq!(earth_rate_n(&m), Vector3::new(0.0, EARTH_RATE, 0.0), epsilon = 1e-20);
        m.latitude = 28f64.to_radians();
        let l = 28f64.to_radians();
        assert_relative_eq!(
            earth_rate_n(&m),
            Vector3::new(EARTH_RATE * l.cos(), EARTH_RATE * l.sin(), 0.0)
        );
        assert_relative_eq!(earth_rate_n(&m).norm(), EARTH_RATE, epsilon = 1e-20);
    }

    #[test]
    fn mag_field_examples() {
        let mut m = EarthModel { mag_declination: 0.0, mag_inclination: 0.0, ..Default::default() };
        assert_relative_eq!(mag_field_n(&m), Vector3::x());
        m.mag_inclination = std::f64::consts::FRAC_PI_2;
        assert_relative_eq!(mag_field_n(&m), -Vector3::y(), epsilon = 1e-16);
        for k in 0..20 {
            m.mag_declination = 0.7 * k as f64 - 3.0;
            m.mag_inclination = 0.31 * k as f64;
            assert!((mag_field_n(&m).norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn detector_examples() {
        let m = EarthModel::default();
        let cfg = DetectorConfig::default();
        assert!(accel_detector(&Vector3::new(0.0, m.gravity, 0.0), &m, &cfg));
        assert!(!accel_detector(&Vector3::new(0.0, m.gravity + 2.0 * cfg.eps_a, 0.0), &m, &cfg));
        // exactly on the boundary is rejected
        let cfg_b = DetectorConfig { eps_a: 0.25, eps_m: 0.25 };
        assert!(!accel_detector(&Vector3::new(0.0, 0.0, m.gravity + 0.25), &m, &cfg_b));
        assert!(mag_detector(&Vector3::new(0.6, 0.8, 0.0), &cfg));
        assert!(!mag_detector(&Vector3::new(0.0, 1.0 + 2.0 * cfg.eps_m, 0.0), &cfg));
        assert!(!mag_detector(&Vector3::new(1.25, 0.0, 0.0), &cfg_b));
    }

    #[test]
    fn gyro_prediction_examples() {
        let m = no_rate();
        let q = Quaternion::from_axis_angle(&Vector3::new(0.3, -0.2, 0.9).normalize(), 0.8);
        assert_eq!(predict_gyro(&q, &Vector4::zeros(), &Vector3::zeros(), &m), Vector3::zeros());
        let w = Vector3::new(0.1, -0.4, 0.25);
        let q_dot = Vector4::new(0.0, w.x, w.y, w.z) * 0.5;
        assert_relative_eq!(
            predict_gyro(&Quaternion::identity(), &q_dot, &Vector3::zeros(), &m),
            w,
            epsilon = 1e-15
        );
    }

    #[test]
    fn accel_and_mag_prediction_examples() {
        let m = EarthModel::default();
        let z = Vector3::zeros();
        assert_relative_eq!(predict_accel(&Quaternion::identity(), &z, &m), Vector3::new(0.0, m.gravity, 0.0));
        let roll = Quaternion::from_axis_angle(&Vector3::x(), std::f64::consts::PI);
        assert_relative_eq!(predict_accel(&roll, &z, &m), Vector3::new(0.0, -m.gravity, 0.0), epsilon = 1e-14);
        assert_relative_eq!(predict_mag(&Quaternion::identity(), &m), mag_field_n(&m));
    }

    fn unit_quat() -> impl Strategy<Value = Quaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(a, b, c, d)| a * a + b * b + c * c + d * d > 0.01)
            .prop_map(|(a, b, c, d)| Quaternion::new(a, b, c, d).normalize())
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn accel_norm_is_gravity(q in unit_quat(), b in vec3()) {
            let m = EarthModel::default();
            prop_assert!(((predict_accel(&q, &b, &m) - b).norm() - m.gravity).abs() < 1e-12);
        }

        #[test]
        fn mag_norm_and_inverse(q in unit_quat()) {
            let m = EarthModel::default();
            let y = predict_mag(&q, &m);
            prop_assert!((y.norm() - 1.0).abs() < 1e-14);
            let back = quat_mul(&quat_mul(&q, &Quaternion::pure(&y)), &q.conj()).eta;
            prop_assert!((back - mag_field_n(&m)).norm() < 1e-14);
        }

        #[test]
        fn detectors_depend_only_on_norms(q in unit_quat(), v in vec3()) {
            let m = EarthModel::default();
            let cfg = DetectorConfig { eps_a: 0.5, eps_m: 0.5 };
            prop_assert_eq!(accel_detector(&(v * 4.0), &m, &cfg), accel_detector(&q.rotate(&(v * 4.0)), &m, &cfg));
            prop_assert_eq!(mag_detector(&v, &cfg), mag_detector(&q.rotate(&v), &cfg));
        }

        #[test]
        fn gyro_prediction_matches_finite_difference(
            a in vec3(), b in vec3(), t in 0.0..3.0f64,
        ) {
            // smooth unit path q(t) = exp(a t) ∘ exp(b t²/2)
            let path = |t: f64| {
                quat_mul(&Quaternion::from_rotation_vector(&(a * t)), &Quaternion::from_rotation_vector(&(b * t * t * 0.5)))
            };
            let h = 1e-7;
            let qd = (path(t + h).to_vec4() - path(t - h).to_vec4()) / (2.0 * h);
            let w = predict_gyro(&path(t), &qd, &Vector3::zeros(), &no_rate());
            // independent oracle: ω = 2 vec(q* ∘ q̇) via explicit products
            let d = Quaternion::from_vec4(&qd);
            let oracle = 2.0 * quat_mul(&path(t).conj(), &d).eta;
            prop_assert!((w - oracle).norm() < 1e-12);
            // body rate from the relative rotation over a short step
            let rel = quat_mul(&path(t).conj(), &path(t + h));
            let fd = 2.0 * rel.eta / h;
            prop_assert!((w - fd).norm() < 1e-6 * (1.0 + w.norm()));
        }
    }
}
