//! Subcommand implementations. Each returns whether every run converged.

use std::path::{Path, PathBuf};
use std::time::Instant;

use attestpo::harness::{
    consistency_fraction, euler_error, monte_carlo, relative_rotation_angle, rotation_angle_error, run_algorithm,
    settling_time, AlgorithmMetrics,
};
use attestpo::rotmath::rotation_between;
use attestpo::sensors::{gravity_n, mag_field_n};
use attestpo::sim::{synthesize, TruthState};
use attestpo::{EstimateState, EstimateTrack, ImuSample, Quaternion, WindowPrior};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::csvio::{self, fmt_f64};
use crate::error::{CliError, Result};

/// Error level (deg) used for the settling time in summaries.
pub const SETTLING_THRESHOLD_DEG: f64 = 1.0;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// `imu.csv`, `truth.csv` and `summary.json` from the configured simulator.
pub fn simulate(config: &RunConfig, out: &Path) -> Result<bool> {
    ensure_dir(out)?;
    let sim = config.coning();
    let output = synthesize(&sim)?;
    csvio::write_imu_csv(&out.join("imu.csv"), &output.samples)?;
    csvio::write_truth_csv(&out.join("truth.csv"), &output.truth)?;
    let rejected = |f: fn(&ImuSample) -> bool| output.samples.iter().filter(|s| !f(s)).count();
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "simulate",
            "config": config,
            "seed": sim.seed,
            "samples": output.samples.len(),
            "accel_rejected": rejected(|s| s.accel_valid),
            "mag_rejected": rejected(|s| s.mag_valid),
        }),
    )?;
    Ok(true)
}

/// Attitude from the first sample with both detectors passing, aligning the
/// measured up and magnetic directions with their navigation-frame values.
pub fn coarse_alignment(samples: &[ImuSample], config: &RunConfig) -> Result<Quaternion> {
    let s = samples
        .iter()
        .find(|s| s.accel_valid && s.mag_valid)
        .or(samples.first())
        .ok_or_else(|| CliError::Validation(vec!["no samples to align on".into()]))?;
    let triad = |a: Vector3<f64>, b: Vector3<f64>| -> Option<Matrix3<f64>> {
        let e1 = a.try_normalize(1e-12)?;
        let e2 = a.cross(&b).try_normalize(1e-12)?;
        Some(Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]))
    };
    let up_n = -gravity_n(&config.earth);
    let body = triad(s.accel, s.mag);
    let nav = triad(up_n, mag_field_n(&config.earth));
    let (Some(body), Some(nav)) = (body, nav) else {
        return Err(CliError::Validation(vec![
            "coarse alignment needs non-parallel accelerometer and magnetometer readings; set prior.initial_quaternion"
                .into(),
        ]));
    };
    // body = C nav, and the active rotation of q is Cᵀ
    let c = body * nav.transpose();
    let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&c.transpose()));
    Ok(Quaternion::new(uq.w, uq.i, uq.j, uq.k).canonical())
}

fn bias_sigma(explicit: Option<[f64; 3]>, sim_bias: &Vector3<f64>) -> Vector3<f64> {
    explicit
        .map(Vector3::from)
        .unwrap_or_else(|| sim_bias.map(|b| 2.0 * b.abs()))
        .map(|s| s.max(1e-9))
}

pub fn estimate_prior(config: &RunConfig, samples: &[ImuSample], truth: Option<&[TruthState]>) -> Result<WindowPrior> {
    let q0 = match (config.prior.initial_quaternion, truth.and_then(|t| t.first())) {
        (Some(q), _) => Quaternion::new(q[0], q[1], q[2], q[3]).normalize(),
        (None, Some(first)) => first.q.normalize(),
        (None, None) => coarse_alignment(samples, config)?,
    };
    Ok(WindowPrior::from_sigmas(
        q0,
        Vector3::zeros(),
        Vector3::zeros(),
        Vector3::from(config.prior.attitude_sigma_deg).map(|d| d.to_radians().max(1e-9)),
        bias_sigma(config.prior.accel_bias_sigma, &config.sim.accel_bias),
        bias_sigma(config.prior.gyro_bias_sigma, &config.sim.gyro_bias),
    ))
}

fn state_json(s: &EstimateState) -> serde_json::Value {
    json!({
        "t": s.t,
        "q": s.q.to_vec4().as_slice(),
        "accel_bias": s.accel_bias.as_slice(),
        "gyro_bias": s.gyro_bias.as_slice(),
    })
}

fn track_json(track: &EstimateTrack) -> serde_json::Value {
    let unconverged: Vec<usize> = track.windows.iter().filter(|w| !w.converged).map(|w| w.index).collect();
    let max_violation = track.windows.iter().map(|w| w.constraint_violation).fold(0.0, f64::max);
    let iterations: usize = track.windows.iter().map(|w| w.iterations).sum();
    json!({
        "converged": track.converged(),
        "windows": track.windows.len(),
        "unconverged_windows": unconverged,
        "total_iterations": iterations,
        "max_constraint_violation": max_violation,
        "final_state": track.states.last().map(state_json),
    })
}

/// One estimate file per selected algorithm plus `summary.json`.
///
/// A single algorithm writes `estimate.csv`; several write
/// `estimate_<name>.csv`.
pub fn estimate(config: &RunConfig, out: &Path) -> Result<bool> {
    let imu = config
        .input
        .imu
        .as_ref()
        .ok_or_else(|| CliError::Validation(vec!["input.imu is required for estimate".into()]))?;
    let samples = csvio::ingest_imu_csv(imu, &config.earth, &config.detectors)?;
    let truth = config.input.truth.as_deref().map(csvio::read_truth_csv).transpose()?;
    let prior = estimate_prior(config, &samples, truth.as_deref())?;
    let estimator = config.estimator();
    ensure_dir(out)?;

    let algorithms = config.mode.algorithms();
    let mut all_converged = true;
    let mut runs = Vec::new();
    for algorithm in &algorithms {
        let file = if algorithms.len() == 1 {
            "estimate.csv".to_string()
        } else {
            format!("estimate_{}.csv", algorithm.name())
        };
        let start = Instant::now();
        let result = run_algorithm(*algorithm, &samples, &prior, &estimator);
        let wall_time = start.elapsed().as_secs_f64();
        match result {
            Ok(track) => {
                csvio::write_estimate_csv(&out.join(&file), &track.states)?;
                all_converged &= track.converged();
                runs.push(json!({
                    "algorithm": algorithm,
                    "file": file,
                    "wall_time": wall_time,
                    "diagnostics": track_json(&track),
                }));
            }
            Err(e) => {
                log::error!("{}: {e}", algorithm.name());
                all_converged = false;
                runs.push(json!({
                    "algorithm": algorithm,
                    "wall_time": wall_time,
                    "error": e.to_string(),
                }));
            }
        }
    }
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "estimate",
            "config": config,
            "seed": config.seed,
            "samples": samples.len(),
            "prior": {
                "q0": prior.q0.to_vec4().as_slice(),
                "sigma": (0..9).map(|i| prior.cov[(i, i)].sqrt()).collect::<Vec<_>>(),
            },
            "all_converged": all_converged,
            "runs": runs,
        }),
    )?;
    Ok(all_converged)
}

fn algorithm_summary(m: &AlgorithmMetrics, times: &[f64]) -> Result<serde_json::Value> {
    let have = !m.errors.attitude.is_empty();
    let fraction = |e: &[f64], b: &[f64]| -> Result<Option<f64>> {
        if have {
            Ok(Some(consistency_fraction(e, b)?))
        } else {
            Ok(None)
        }
    };
    Ok(json!({
        "algorithm": m.algorithm,
        "completed_runs": m.completed_runs,
        "converged_runs": m.converged_runs,
        "failures": m.failures,
        "final_euler_rmse_deg": m.final_euler_rmse.map(f64::to_degrees).as_slice(),
        "final_attitude_error_deg": m.errors.attitude.last().map(|e| e.to_degrees()),
        "mean_attitude_error_deg": have.then(|| {
            m.errors.attitude.iter().sum::<f64>() / m.errors.attitude.len() as f64
        }.to_degrees()),
        "settling_time": if have {
            settling_time(times, &m.errors.attitude, SETTLING_THRESHOLD_DEG.to_radians())
        } else {
            None
        },
        "consistency_fraction": {
            "attitude": fraction(&m.errors.attitude, &m.bounds.attitude)?,
            "accel_bias": fraction(&m.errors.accel_bias, &m.bounds.accel_bias)?,
            "gyro_bias": fraction(&m.errors.gyro_bias, &m.bounds.gyro_bias)?,
        },
        "mean_wall_time": m.mean_wall_time,
    }))
}

/// `metrics.csv` with averaged error and 2σ bound tracks, plus `summary.json`.
pub fn montecarlo(config: &RunConfig, out: &Path) -> Result<bool> {
    ensure_dir(out)?;
    let mc = config.monte_carlo();
    let start = Instant::now();
    let metrics = monte_carlo(&mc)?;
    let wall_time = start.elapsed().as_secs_f64();

    let mut header = vec!["t".to_string()];
    for m in &metrics.algorithms {
        for q in ["att", "ba", "bg"] {
            header.push(format!("{}_{q}_err", m.algorithm.name()));
            header.push(format!("{}_{q}_bound", m.algorithm.name()));
        }
    }
    let path = out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    w.write_record(&header).map_err(|e| CliError::csv(&path, e))?;
    for (k, t) in metrics.times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        for m in &metrics.algorithms {
            for (e, b) in [
                (&m.errors.attitude, &m.bounds.attitude),
                (&m.errors.accel_bias, &m.bounds.accel_bias),
                (&m.errors.gyro_bias, &m.bounds.gyro_bias),
            ] {
                let get = |v: &Vec<f64>| v.get(k).copied().unwrap_or(f64::NAN);
                row.push(fmt_f64(get(e)));
                row.push(fmt_f64(get(b)));
            }
        }
        w.write_record(&row).map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let all_converged = metrics
        .algorithms
        .iter()
        .all(|m| m.failures.is_empty() && m.converged_runs == config.runs);
    let algorithms = metrics
        .algorithms
        .iter()
        .map(|m| algorithm_summary(m, &metrics.times))
        .collect::<Result<Vec<_>>>()?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "montecarlo",
            "config": config,
            "seeds": metrics.seeds,
            "all_converged": all_converged,
            "wall_time": wall_time,
            "algorithms": algorithms,
        }),
    )?;
    Ok(all_converged)
}

/// Error table of one estimate against a truth track.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorTable {
    pub t: Vec<f64>,
    /// Rotation angle between estimate and truth (rad).
    pub attitude: Vec<f64>,
    /// Wrapped `[roll, yaw, pitch]` differences (rad).
    pub euler: Vec<Vector3<f64>>,
    pub accel_bias: Vec<f64>,
    pub gyro_bias: Vec<f64>,
    /// Twice the norm of the per-axis attitude standard deviations (rad).
    pub attitude_bound: Vec<f64>,
    /// Difference of the rotation angles accumulated since the first sample.
    pub relative_angle: Vec<f64>,
}

pub fn error_table(estimate: &[EstimateState], truth: &[TruthState]) -> Result<ErrorTable> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(attestpo::Error::MismatchedTracks(format!(
            "{} estimate rows against {} truth rows",
            estimate.len(),
            truth.len()
        ))
        .into());
    }
    let (e0, r0) = (&estimate[0].q, &truth[0].q);
    let mut table = ErrorTable::default();
    for (e, r) in estimate.iter().zip(truth) {
        if (e.t - r.t).abs() > 1e-9 * (1.0 + r.t.abs()) {
            return Err(attestpo::Error::MismatchedTracks(format!("time {} against {}", e.t, r.t)).into());
        }
        table.t.push(r.t);
        table.attitude.push(rotation_between(&r.q, &e.q));
        table.euler.push(euler_error(&e.q, &r.q));
        table.accel_bias.push((e.accel_bias - r.accel_bias).norm());
        table.gyro_bias.push((e.gyro_bias - r.gyro_bias).norm());
        let var: f64 = (0..3).map(|i| e.cov[(i, i)]).sum();
        table.attitude_bound.push(2.0 * var.max(0.0).sqrt());
        table.relative_angle.push(rotation_angle_error(
            relative_rotation_angle(&r.q, r0),
            relative_rotation_angle(&e.q, e0),
        ));
    }
    Ok(table)
}

fn write_error_table(path: &Path, table: &ErrorTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record([
        "t", "att_err", "roll_err", "yaw_err", "pitch_err", "ba_err", "bg_err", "att_bound", "rel_angle_err",
    ])
    .map_err(|e| CliError::csv(path, e))?;
    for k in 0..table.t.len() {
        let e = &table.euler[k];
        let row = [
            table.t[k],
            table.attitude[k],
            e[0],
            e[1],
            e[2],
            table.accel_bias[k],
            table.gyro_bias[k],
            table.attitude_bound[k],
            table.relative_angle[k],
        ];
        w.write_record(row.map(fmt_f64)).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.map(f64::abs).fold(0.0, f64::max)
}

/// `metrics_<stem>.csv` per estimate file plus `metrics_summary.json`.
pub fn metrics(estimates: &[PathBuf], truth: &Path, out: &Path) -> Result<bool> {
    if estimates.is_empty() {
        return Err(CliError::Validation(vec!["no estimate files given".into()]));
    }
    ensure_dir(out)?;
    let truth_states = csvio::read_truth_csv(truth)?;
    let mut reports = Vec::new();
    for path in estimates {
        let states = csvio::read_estimate_csv(path)?;
        let table = error_table(&states, &truth_states)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("estimate");
        let file = format!("metrics_{stem}.csv");
        write_error_table(&out.join(&file), &table)?;
        let n = table.t.len() as f64;
        let final_euler = table.euler.last().expect("non-empty").map(f64::to_degrees);
        reports.push(json!({
            "estimate": path,
            "file": file,
            "final_attitude_error_deg": table.attitude.last().expect("non-empty").to_degrees(),
            "mean_attitude_error_deg": table.attitude.iter().sum::<f64>() / n * 180.0 / std::f64::consts::PI,
            "max_attitude_error_deg": max_abs(table.attitude.iter().copied()).to_degrees(),
            "final_euler_error_deg": final_euler.as_slice(),
            "final_accel_bias_error": table.accel_bias.last(),
            "final_gyro_bias_error": table.gyro_bias.last(),
            "max_relative_angle_error_deg": max_abs(table.relative_angle.iter().copied()).to_degrees(),
            "consistency_fraction": consistency_fraction(&table.attitude, &table.attitude_bound)?,
            "settling_time": settling_time(&table.t, &table.attitude, SETTLING_THRESHOLD_DEG.to_radians()),
        }));
    }
    write_json(
        &out.join("metrics_summary.json"),
        &json!({ "command": "metrics", "truth": truth, "reports": reports }),
    )?;
    Ok(true)
}
