//! Coning-motion ground truth and noisy inertial-magnetic sample synthesis.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::Quaternion;
use crate::sensors::{
    predict_accel, predict_gyro, predict_mag, DetectorConfig, EarthModel, ImuSample, NoiseSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConingConfig {
    /// Coning frequency (rad/s).
    pub coning_freq: f64,
    /// Coning half-angle of the rotation (rad).
    pub coning_angle: f64,
    /// Track length (s); samples run from 0 to `duration` inclusive.
    pub duration: f64,
    /// Sample rate (Hz).
    pub sample_rate: f64,
    pub earth: EarthModel,
    pub noise: NoiseSpec,
    pub detectors: DetectorConfig,
    /// True gyro bias (rad/s).
    pub gyro_bias: Vector3<f64>,
    /// True accelerometer bias (m/s²).
    pub accel_bias: Vector3<f64>,
    /// Whether the gyro senses the Earth rotation.
    pub gyro_senses_earth_rate: bool,
    pub seed: u64,
}

impl Default for ConingConfig {
    fn default() -> Self {
        Self {
            coning_freq: 0.74 * std::f64::consts::PI,
            coning_angle: 10f64.to_radians(),
            duration: 20.0,
            sample_rate: 100.0,
            earth: EarthModel::default(),
            noise: NoiseSpec::reference(100.0),
            detectors: DetectorConfig::default(),
            gyro_bias: Vector3::new(0.5, 0.3, -0.2).map(f64::to_radians),
            accel_bias: Vector3::new(0.1, 0.2, -0.2),
            gyro_senses_earth_rate: true,
            seed: 0,
        }
    }
}

impl ConingConfig {
    /// Noise-free, bias-free variant of the configuration.
    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseSpec {
            gyro_cov: Matrix3::zeros(),
            accel_cov: Matrix3::zeros(),
            mag_cov: Matrix3::zeros(),
            gyro_bias_psd: Matrix3::zeros(),
            accel_bias_psd: Matrix3::zeros(),
        };
        self.gyro_bias = Vector3::zeros();
        self.accel_bias = Vector3::zeros();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::domain("sample rate must be positive"));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::domain("duration must be positive"));
        }
        self.earth.validate()
    }

    /// Number of samples on `[0, duration]`, both ends included.
    pub fn sample_count(&self) -> usize {
        (self.duration * self.sample_rate + 1e-9).floor() as usize + 1
    }

    /// Environment as seen by the gyro.
    fn gyro_earth(&self) -> EarthModel {
        if self.gyro_senses_earth_rate {
            self.earth
        } else {
            self.earth.without_earth_rate()
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.duration * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::domain(format!("t = {t} outside [0, {}]", self.duration)));
        }
        Ok(())
    }
}

/// True state at one sample instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub t: f64,
    pub q: Quaternion,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub samples: Vec<ImuSample>,
    pub truth: Vec<TruthState>,
}

fn coning_parts(cfg: &ConingConfig, t: f64) -> (Quaternion, Vector4<f64>) {
    let (sa, ca) = (0.5 * cfg.coning_angle).sin_cos();
    let (sz, cz) = (cfg.coning_freq * t).sin_cos();
    let q = Quaternion::new(ca, 0.0, sa * cz, sa * sz);
    let q_dot = Vector4::new(0.0, 0.0, -sa * sz, sa * cz) * cfg.coning_freq;
    (q, q_dot)
}

pub fn coning_quat(cfg: &ConingConfig, t: f64) -> Result<Quaternion> {
    cfg.check_time(t)?;
    Ok(coning_parts(cfg, t).0)
}

/// Analytic body angular rate relative to inertial space.
pub fn coning_omega(cfg: &ConingConfig, t: f64) -> Result<Vector3<f64>> {
    cfg.check_time(t)?;
    let (q, q_dot) = coning_parts(cfg, t);
    Ok(predict_gyro(&q, &q_dot, &Vector3::zeros(), &cfg.gyro_earth()))
}

fn draw(rng: &mut ChaCha20Rng, chol: &Matrix3<f64>) -> Vector3<f64> {
    let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    chol * z
}

/// Lower Cholesky factor of a PSD covariance; zero for a zero matrix.
fn noise_factor(cov: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(Matrix3::zeros());
    }
    cov.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite("noise covariance".into()))
}

pub fn synthesize(cfg: &ConingConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let lg = noise_factor(&cfg.noise.gyro_cov)?;
    let la = noise_factor(&cfg.noise.accel_cov)?;
    let lm = noise_factor(&cfg.noise.mag_cov)?;
    let dt = 1.0 / cfg.sample_rate;
    let lbg = noise_factor(&(cfg.noise.gyro_bias_psd * dt))?;
    let lba = noise_factor(&(cfg.noise.accel_bias_psd * dt))?;
    let gyro_earth = cfg.gyro_earth();

    let n = cfg.sample_count();
    let mut samples = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut b_g = cfg.gyro_bias;
    let mut b_a = cfg.accel_bias;
    for k in 0..n {
        let t = k as f64 * dt;
        let (q, q_dot) = coning_parts(cfg, t);
        let y_g = predict_gyro(&q, &q_dot, &b_g, &gyro_earth) + draw(&mut rng, &lg);
        let y_a = predict_accel(&q, &b_a, &cfg.earth) + draw(&mut rng, &la);
        let y_m = predict_mag(&q, &cfg.earth) + draw(&mut rng, &lm);
        samples.push(ImuSample::detect(t, y_g, y_a, y_m, &cfg.earth, &cfg.detectors));
        truth.push(TruthState {
            t,
            q,
            accel_bias: b_a,
            gyro_bias: b_g,
        });
        b_g += draw(&mut rng, &lbg);
        b_a += draw(&mut rng, &lba);
    }
    Ok(SimOutput { samples, truth })
}
