//! Run configuration (JSON).
//!
//! Every key is optional; missing keys take the reference simulation
//! defaults and unknown keys are rejected. Angles and rates are in radians,
//! except the prior attitude sigmas, which are in degrees.

use std::path::{Path, PathBuf};

use attestpo::harness::MonteCarloConfig;
use attestpo::{
    Algorithm, ConingConfig, DetectorConfig, EarthModel, EstimatorConfig, NoiseSpec,
};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Qua,
    Rod,
    Ekf,
    #[default]
    All,
}

impl ModeSelection {
    pub fn algorithms(&self) -> Vec<Algorithm> {
        match self {
            ModeSelection::Qua => vec![Algorithm::Qua],
            ModeSelection::Rod => vec![Algorithm::Rod],
            ModeSelection::Ekf => vec![Algorithm::Ekf],
            ModeSelection::All => Algorithm::ALL.to_vec(),
        }
    }
}

/// Coning trajectory and sensor errors of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// rad/s
    pub coning_freq: f64,
    /// rad
    pub coning_angle: f64,
    /// s
    pub duration: f64,
    /// Hz
    pub sample_rate: f64,
    /// rad/s
    pub gyro_bias: Vector3<f64>,
    /// m/s²
    pub accel_bias: Vector3<f64>,
    pub gyro_senses_earth_rate: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        let c = ConingConfig::default();
        Self {
            coning_freq: c.coning_freq,
            coning_angle: c.coning_angle,
            duration: c.duration,
            sample_rate: c.sample_rate,
            gyro_bias: c.gyro_bias,
            accel_bias: c.accel_bias,
            gyro_senses_earth_rate: c.gyro_senses_earth_rate,
        }
    }
}

/// Initial state uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    /// `[roll, yaw, pitch]` standard deviations (deg).
    pub attitude_sigma_deg: [f64; 3],
    /// m/s²; twice the simulator bias magnitudes when unset.
    pub accel_bias_sigma: Option<[f64; 3]>,
    /// rad/s; twice the simulator bias magnitudes when unset.
    pub gyro_bias_sigma: Option<[f64; 3]>,
    /// Initial attitude `[qw, qx, qy, qz]` for `estimate`. Taken from the
    /// truth file, or from a coarse alignment on the first sample, when unset.
    pub initial_quaternion: Option<[f64; 4]>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            attitude_sigma_deg: [5.0, 180.0, 5.0],
            accel_bias_sigma: None,
            gyro_bias_sigma: None,
            initial_quaternion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub imu: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ModeSelection,
    /// s
    pub window_size: f64,
    pub cheb_order: usize,
    /// `cheb_order + 1` when unset.
    pub quad_points: Option<usize>,
    pub efh_degree: usize,
    pub detectors: DetectorConfig,
    pub earth: EarthModel,
    pub noise: NoiseSpec,
    pub sim: SimSection,
    pub prior: PriorSection,
    pub input: InputSection,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub runs: usize,
    /// Monte-Carlo parallelism; `ATTESTPO_THREADS` applies when unset.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let est = EstimatorConfig::default();
        let mc = MonteCarloConfig::default();
        Self {
            mode: ModeSelection::All,
            window_size: est.window_size,
            cheb_order: est.order,
            quad_points: None,
            efh_degree: est.efh_degree,
            detectors: DetectorConfig::default(),
            earth: EarthModel::default(),
            noise: NoiseSpec::default(),
            sim: SimSection::default(),
            prior: PriorSection::default(),
            input: InputSection::default(),
            output_dir: PathBuf::from("out"),
            seed: mc.seed,
            runs: mc.runs,
            threads: None,
        }
    }
}

fn backticked(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

fn positive_definite(m: &Matrix3<f64>) -> bool {
    (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0) && m.cholesky().is_some()
}

fn non_negative(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && *x >= 0.0)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            CliError::Parse {
                line: e.line(),
                column: e.column(),
                key: backticked(&message),
                message,
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Collects every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                v.push(msg.to_string());
            }
        };
        check(self.window_size > 0.0 && self.window_size.is_finite(), "window_size must be positive");
        check(self.cheb_order >= 1, "cheb_order must be at least 1");
        check(self.quad_points.is_none_or(|n| n >= 2), "quad_points must be at least 2");
        check(self.efh_degree >= 1, "efh_degree must be at least 1");
        check(self.runs >= 1, "runs must be at least 1");
        check(self.threads != Some(0), "threads must be at least 1");
        check(
            self.detectors.eps_a >= 0.0 && self.detectors.eps_m >= 0.0,
            "detector thresholds must be non-negative",
        );
        check(self.earth.validate().is_ok(), "earth: gravity must be positive and earth_rate non-negative");
        for (name, m) in [
            ("noise.gyro_cov", &self.noise.gyro_cov),
            ("noise.accel_cov", &self.noise.accel_cov),
            ("noise.mag_cov", &self.noise.mag_cov),
        ] {
            check(positive_definite(m), &format!("{name} must be symmetric positive definite"));
        }
        for (name, m) in [
            ("noise.gyro_bias_psd", &self.noise.gyro_bias_psd),
            ("noise.accel_bias_psd", &self.noise.accel_bias_psd),
        ] {
            check(
                attestpo::track::min_eigenvalue(m) >= -1e-15 && (m - m.transpose()).amax() <= 1e-15,
                &format!("{name} must be symmetric positive semi-definite"),
            );
        }
        check(self.sim.duration > 0.0, "sim.duration must be positive");
        check(self.sim.sample_rate > 0.0, "sim.sample_rate must be positive");
        check(
            self.window_size * self.sim.sample_rate >= 1.0,
            "window_size must span at least one sample period",
        );
        check(
            non_negative(&self.prior.attitude_sigma_deg),
            "prior.attitude_sigma_deg must be non-negative",
        );
        check(
            self.prior.accel_bias_sigma.is_none_or(|s| non_negative(&s)),
            "prior.accel_bias_sigma must be non-negative",
        );
        check(
            self.prior.gyro_bias_sigma.is_none_or(|s| non_negative(&s)),
            "prior.gyro_bias_sigma must be non-negative",
        );
        check(
            self.prior
                .initial_quaternion
                .is_none_or(|q| q.iter().map(|x| x * x).sum::<f64>() > 0.0),
            "prior.initial_quaternion must be nonzero",
        );
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(v))
        }
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            window_size: self.window_size,
            order: self.cheb_order,
            quad_points: self.quad_points,
            efh_degree: self.efh_degree,
            noise: self.noise,
            earth: self.earth,
            ..EstimatorConfig::default()
        }
    }

    pub fn quad_points(&self) -> usize {
        self.estimator().quad_points()
    }

    pub fn coning(&self) -> ConingConfig {
        ConingConfig {
            coning_freq: self.sim.coning_freq,
            coning_angle: self.sim.coning_angle,
            duration: self.sim.duration,
            sample_rate: self.sim.sample_rate,
            earth: self.earth,
            noise: self.noise,
            detectors: self.detectors,
            gyro_bias: self.sim.gyro_bias,
            accel_bias: self.sim.accel_bias,
            gyro_senses_earth_rate: self.sim.gyro_senses_earth_rate,
            seed: self.seed,
        }
    }

    pub fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            runs: self.runs,
            seed: self.seed,
            sim: self.coning(),
            estimator: self.estimator(),
            algorithms: self.mode.algorithms(),
            attitude_sigma: Vector3::from(self.prior.attitude_sigma_deg).map(f64::to_radians),
            accel_bias_sigma: self.prior.accel_bias_sigma.map(Vector3::from),
            gyro_bias_sigma: self.prior.gyro_bias_sigma.map(Vector3::from),
            threads: self.threads,
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    RunConfig::from_json(&text)
}
