//! Monte-Carlo orchestration, error metrics and consistency statistics.

use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{run_sliding, EstimatorConfig, Mode};
use crate::mekf::run_ekf;
use crate::rotmath::{euler_nue, quat_from_euler_nue, quat_mul, rotation_between, Quaternion};
use crate::sensors::ImuSample;
use crate::sim::{synthesize, ConingConfig, TruthState};
use crate::track::{EstimateTrack, WindowPrior};

/// Environment variable capping Monte-Carlo parallelism.
pub const THREADS_ENV: &str = "ATTESTPO_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ekf,
    Qua,
    Rod,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ekf, Algorithm::Qua, Algorithm::Rod];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Ekf => "ekf",
            Algorithm::Qua => "qua",
            Algorithm::Rod => "rod",
        }
    }
}

/// Runs one algorithm over a record.
pub fn run_algorithm(
    algorithm: Algorithm,
    samples: &[ImuSample],
    prior: &WindowPrior,
    config: &EstimatorConfig,
) -> Result<EstimateTrack> {
    match algorithm {
        Algorithm::Ekf => run_ekf(samples, prior, &config.noise, &config.earth),
        Algorithm::Qua => run_sliding(samples, prior, &config.with_mode(Mode::Qua)),
        Algorithm::Rod => run_sliding(samples, prior, &config.with_mode(Mode::Rod)),
    }
}

/// Per-time averages of absolute errors over a set of runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTracks {
    /// Rotation angle between estimate and truth (rad).
    pub attitude: Vec<f64>,
    pub accel_bias: Vec<f64>,
    pub gyro_bias: Vec<f64>,
}

fn check_aligned(track: &EstimateTrack, truth: &[TruthState]) -> Result<()> {
    if track.states.len() != truth.len() {
        return Err(Error::MismatchedTracks(format!(
            "{} estimates vs {} truth states",
            track.states.len(),
            truth.len()
        )));
    }
    for (s, t) in track.states.iter().zip(truth) {
        if (s.t - t.t).abs() > 1e-9 * t.t.abs().max(1.0) {
            return Err(Error::MismatchedTracks(format!("time {} vs {}", s.t, t.t)));
        }
    }
    Ok(())
}

/// `ε(k) = (1/L) Σ ‖x̂(k) - x(k)‖` per component group.
pub fn avg_abs_error(runs: &[(&EstimateTrack, &[TruthState])]) -> Result<ErrorTracks> {
    let first = runs.first().ok_or_else(|| Error::domain("no runs"))?;
    let n = first.1.len();
    let mut out = ErrorTracks {
        attitude: vec![0.0; n],
        accel_bias: vec![0.0; n],
        gyro_bias: vec![0.0; n],
    };
    for (track, truth) in runs {
        if truth.len() != n {
            return Err(Error::MismatchedTracks("runs differ in length".into()));
        }
        check_aligned(track, truth)?;
        for (k, (s, t)) in track.states.iter().zip(truth.iter()).enumerate() {
            out.attitude[k] += rotation_between(&s.q, &t.q);
            out.accel_bias[k] += (s.accel_bias - t.accel_bias).norm();
            out.gyro_bias[k] += (s.gyro_bias - t.gyro_bias).norm();
        }
    }
    let l = runs.len() as f64;
    for v in [&mut out.attitude, &mut out.accel_bias, &mut out.gyro_bias] {
        v.iter_mut().for_each(|x| *x /= l);
    }
    Ok(out)
}

/// Twice the run-averaged standard deviations of each 3-axis block, combined
/// as a vector norm so they bound the error norms of [`avg_abs_error`].
pub fn sigma_bounds(tracks: &[&EstimateTrack]) -> Result<ErrorTracks> {
    let first = tracks.first().ok_or_else(|| Error::domain("no runs"))?;
    let n = first.states.len();
    let mut sums = vec![[Vector3::<f64>::zeros(); 3]; n];
    for track in tracks {
        if track.states.len() != n {
            return Err(Error::MismatchedTracks("runs differ in length".into()));
        }
        for (k, s) in track.states.iter().enumerate() {
            for (b, sum) in sums[k].iter_mut().enumerate() {
                *sum += Vector3::from_fn(|i, _| s.cov[(3 * b + i, 3 * b + i)].max(0.0).sqrt());
            }
        }
    }
    let l = tracks.len() as f64;
    let bound = |k: usize, b: usize| 2.0 * sums[k][b].norm() / l;
    Ok(ErrorTracks {
        attitude: (0..n).map(|k| bound(k, 0)).collect(),
        accel_bias: (0..n).map(|k| bound(k, 1)).collect(),
        gyro_bias: (0..n).map(|k| bound(k, 2)).collect(),
    })
}

/// Rotation angle of `q₀* ∘ q(t)`, the body rotation accumulated since the
/// initial attitude.
///
/// Equal to `2 acos(s)` of the canonical relative quaternion; the `atan2`
/// form keeps full precision near zero.
pub fn relative_rotation_angle(q_t: &Quaternion, q_0: &Quaternion) -> f64 {
    let rel = quat_mul(&q_0.conj(), q_t).canonical();
    2.0 * rel.eta.norm().atan2(rel.s)
}

pub fn rotation_angle_error(alpha_ref: f64, alpha_est: f64) -> f64 {
    (alpha_ref - alpha_est).abs()
}

/// Fraction of time steps whose error lies within the bound track.
pub fn consistency_fraction(error: &[f64], bound: &[f64]) -> Result<f64> {
    if error.len() != bound.len() {
        return Err(Error::MismatchedTracks("error and bound differ in length".into()));
    }
    if error.is_empty() {
        return Err(Error::domain("empty tracks"));
    }
    let inside = error.iter().zip(bound).filter(|(e, b)| e <= b).count();
    Ok(inside as f64 / error.len() as f64)
}

/// First time after which `error` stays below `threshold`.
pub fn settling_time(times: &[f64], error: &[f64], threshold: f64) -> Option<f64> {
    match error.iter().rposition(|e| !(*e < threshold)) {
        None => times.first().copied(),
        Some(k) => times.get(k + 1).copied(),
    }
}

/// Euler-angle error `[roll, yaw, pitch]` wrapped to `(-π, π]`.
pub fn euler_error(q_est: &Quaternion, q_true: &Quaternion) -> Vector3<f64> {
    let d = euler_nue(q_est) - euler_nue(q_true);
    d.map(|a| {
        let w = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        if w == -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            w
        }
    })
}

/// Per-axis RMSE of the final Euler errors over runs.
pub fn final_euler_rmse(runs: &[(&EstimateTrack, &[TruthState])]) -> Result<Vector3<f64>> {
    if runs.is_empty() {
        return Err(Error::domain("no runs"));
    }
    let mut sum = Vector3::zeros();
    for (track, truth) in runs {
        check_aligned(track, truth)?;
        let (s, t) = track
            .states
            .last()
            .zip(truth.last())
            .ok_or_else(|| Error::domain("empty track"))?;
        sum += euler_error(&s.q, &t.q).map(|e| e * e);
    }
    Ok((sum / runs.len() as f64).map(f64::sqrt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub runs: usize,
    pub seed: u64,
    pub sim: ConingConfig,
    pub estimator: EstimatorConfig,
    pub algorithms: Vec<Algorithm>,
    /// Standard deviation of the initial `[roll, yaw, pitch]` error (rad).
    pub attitude_sigma: Vector3<f64>,
    /// Prior bias standard deviations; twice the true bias magnitudes when
    /// unset.
    pub accel_bias_sigma: Option<Vector3<f64>>,
    pub gyro_bias_sigma: Option<Vector3<f64>>,
    /// Parallelism cap; falls back to [`THREADS_ENV`], then to rayon's default.
    pub threads: Option<usize>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            runs: 20,
            seed: 1,
            sim: ConingConfig::default(),
            estimator: EstimatorConfig::default(),
            algorithms: Algorithm::ALL.to_vec(),
            attitude_sigma: Vector3::new(5.0, 180.0, 5.0).map(f64::to_radians),
            accel_bias_sigma: None,
            gyro_bias_sigma: None,
            threads: None,
        }
    }
}

/// Seeds of replication `run`: simulator noise, then prior draw.
pub fn run_seeds(base: u64, run: usize) -> (u64, u64) {
    let s = base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(run as u64);
    (s, s ^ 0xD1B5_4A32_D192_ED03)
}

fn bias_sigma(explicit: Option<Vector3<f64>>, truth: &Vector3<f64>) -> Vector3<f64> {
    explicit.unwrap_or_else(|| truth.map(|b| (2.0 * b.abs()).max(1e-9)))
}

/// Zero-bias prior whose attitude is the truth perturbed by random Euler
/// angle errors.
pub fn draw_prior(config: &MonteCarloConfig, q_true: &Quaternion, seed: u64) -> Result<WindowPrior> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut delta = Vector3::zeros();
    for i in 0..3 {
        let sigma = config.attitude_sigma[i];
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::domain("attitude sigma must be finite and non-negative"));
        }
        if sigma > 0.0 {
            delta[i] = Normal::new(0.0, sigma)
                .map_err(|e| Error::domain(e.to_string()))?
                .sample(&mut rng);
        }
    }
    let q0 = quat_from_euler_nue(&(euler_nue(q_true) + delta)).canonical();
    Ok(WindowPrior::from_sigmas(
        q0,
        Vector3::zeros(),
        Vector3::zeros(),
        config.attitude_sigma.map(|s| s.max(1e-9)),
        bias_sigma(config.accel_bias_sigma, &config.sim.accel_bias),
        bias_sigma(config.gyro_bias_sigma, &config.sim.gyro_bias),
    ))
}

/// Outcome of one algorithm on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run: usize,
    pub algorithm: Algorithm,
    pub wall_time: f64,
    pub result: std::result::Result<EstimateTrack, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub message: String,
}

/// Aggregate results of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmMetrics {
    pub algorithm: Algorithm,
    pub completed_runs: usize,
    pub converged_runs: usize,
    pub failures: Vec<RunFailure>,
    /// Averaged absolute errors (rad, m/s², rad/s).
    pub errors: ErrorTracks,
    /// 2σ bound tracks in the same units.
    pub bounds: ErrorTracks,
    /// Final Euler `[roll, yaw, pitch]` RMSE (rad).
    pub final_euler_rmse: Vector3<f64>,
    /// Mean wall-clock time per track (s).
    pub mean_wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub times: Vec<f64>,
    /// `(simulator seed, prior seed)` of each replication.
    pub seeds: Vec<(u64, u64)>,
    pub algorithms: Vec<AlgorithmMetrics>,
}

impl RunMetrics {
    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmMetrics> {
        self.algorithms.iter().find(|m| m.algorithm == algorithm)
    }
}

fn thread_count(config: &MonteCarloConfig) -> Option<usize> {
    config.threads.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .filter(|&n: &usize| n > 0)
    })
}

struct Replication {
    truth: Vec<TruthState>,
    outcomes: Vec<RunOutcome>,
}

fn replicate(config: &MonteCarloConfig, run: usize) -> Result<Replication> {
    let (sim_seed, prior_seed) = run_seeds(config.seed, run);
    let sim = ConingConfig {
        seed: sim_seed,
        ..config.sim
    };
    let out = synthesize(&sim)?;
    let prior = draw_prior(config, &out.truth[0].q, prior_seed)?;
    let outcomes = config
        .algorithms
        .iter()
        .map(|&algorithm| {
            let start = Instant::now();
            let result = run_algorithm(algorithm, &out.samples, &prior, &config.estimator);
            RunOutcome {
                run,
                algorithm,
                wall_time: start.elapsed().as_secs_f64(),
                result: result.map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(Replication {
        truth: out.truth,
        outcomes,
    })
}

/// Simulates `runs` replications and evaluates every configured algorithm.
///
/// Estimator failures are recorded per run rather than aborting; simulator
/// or configuration errors are fatal.
pub fn monte_carlo(config: &MonteCarloConfig) -> Result<RunMetrics> {
    if config.runs == 0 {
        return Err(Error::domain("need at least one replication"));
    }
    if config.algorithms.is_empty() {
        return Err(Error::domain("no algorithms selected"));
    }
    config.sim.validate()?;
    config.estimator.validate()?;
    let work = || -> Result<Vec<Replication>> {
        (0..config.runs)
            .into_par_iter()
            .map(|run| replicate(config, run))
            .collect()
    };
    let reps = match thread_count(config) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::domain(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let seeds: Vec<_> = (0..config.runs).map(|r| run_seeds(config.seed, r)).collect();
    let times = reps[0].truth.iter().map(|t| t.t).collect();
    let mut algorithms = Vec::new();
    for (a, &algorithm) in config.algorithms.iter().enumerate() {
        let mut ok: Vec<(&EstimateTrack, &[TruthState])> = Vec::new();
        let mut failures = Vec::new();
        let mut wall = 0.0;
        for rep in &reps {
            let o = &rep.outcomes[a];
            wall += o.wall_time;
            match &o.result {
                Ok(track) => ok.push((track, &rep.truth)),
                Err(message) => failures.push(RunFailure {
                    run: o.run,
                    seed: seeds[o.run].0,
                    message: message.clone(),
                }),
            }
        }
        let (errors, bounds, rmse) = if ok.is_empty() {
            (ErrorTracks::default(), ErrorTracks::default(), Vector3::repeat(f64::NAN))
        } else {
            let tracks: Vec<_> = ok.iter().map(|(t, _)| *t).collect();
            (avg_abs_error(&ok)?, sigma_bounds(&tracks)?, final_euler_rmse(&ok)?)
        };
        algorithms.push(AlgorithmMetrics {
            algorithm,
            completed_runs: ok.len(),
            converged_runs: ok.iter().filter(|(t, _)| t.converged()).count(),
            failures,
            errors,
            bounds,
            final_euler_rmse: rmse,
            mean_wall_time: wall / reps.len() as f64,
        });
    }
    Ok(RunMetrics {
        times,
        seeds,
        algorithms,
    })
}

/// Wall-clock seconds of one full track per algorithm, run sequentially.
pub fn time_algorithms(
    algorithms: &[(Algorithm, EstimatorConfig)],
    samples: &[ImuSample],
    prior: &WindowPrior,
) -> Result<Vec<f64>> {
    algorithms
        .iter()
        .map(|(algorithm, config)| {
            let start = Instant::now();
            run_algorithm(*algorithm, samples, prior, config)?;
            Ok(start.elapsed().as_secs_f64())
        })
        .collect()
}
