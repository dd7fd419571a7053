use std::path::Path;
use std::process::Command;

use attestpo::harness::Algorithm;
use attestpo::rotmath::rotation_between;
use attestpo::sim::synthesize;
use attestpo_cli::commands::{coarse_alignment, estimate, metrics, simulate};
use attestpo_cli::csvio::{read_estimate_csv, read_truth_csv};
use attestpo_cli::{ModeSelection, RunConfig};
use serde_json::Value;

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulated(dir: &Path, duration: f64) -> RunConfig {
    let mut c = RunConfig::default();
    c.sim.duration = duration;
    simulate(&c, &dir.join("sim")).unwrap();
    c.input.imu = Some(dir.join("sim/imu.csv"));
    c.input.truth = Some(dir.join("sim/truth.csv"));
    c
}

#[test]
fn mode_all_writes_three_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let c = simulated(dir.path(), 20.0);
    let out = dir.path().join("est");
    assert!(estimate(&c, &out).unwrap());
    let truth = read_truth_csv(&dir.path().join("sim/truth.csv")).unwrap();
    for a in Algorithm::ALL {
        let states = read_estimate_csv(&out.join(format!("estimate_{}.csv", a.name()))).unwrap();
        assert_eq!(states.len(), truth.len());
        let last = states.last().unwrap();
        let err = rotation_between(&last.q, &truth.last().unwrap().q).to_degrees();
        assert!(err < 5.0, "{} final error {err} deg", a.name());
    }
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["runs"].as_array().unwrap().len(), 3);
    assert_eq!(summary["all_converged"], Value::Bool(true));
}

#[test]
fn single_mode_writes_estimate_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = simulated(dir.path(), 2.0);
    c.mode = ModeSelection::Rod;
    let out = dir.path().join("est");
    assert!(estimate(&c, &out).unwrap());
    assert_eq!(read_estimate_csv(&out.join("estimate.csv")).unwrap().len(), 201);
}

#[test]
fn identical_estimate_and_truth_give_zero_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = simulated(dir.path(), 2.0);
    c.mode = ModeSelection::Ekf;
    let out = dir.path().join("est");
    estimate(&c, &out).unwrap();
    let est = out.join("estimate.csv");
    assert!(metrics(std::slice::from_ref(&est), &est, &out).unwrap());
    let report = &read_json(&out.join("metrics_summary.json"))["reports"][0];
    for key in [
        "final_attitude_error_deg",
        "mean_attitude_error_deg",
        "max_attitude_error_deg",
        "final_accel_bias_error",
        "final_gyro_bias_error",
        "max_relative_angle_error_deg",
    ] {
        assert_eq!(report[key].as_f64(), Some(0.0), "{key}");
    }
    for e in report["final_euler_error_deg"].as_array().unwrap() {
        assert_eq!(e.as_f64(), Some(0.0));
    }
    let table = std::fs::read_to_string(out.join("metrics_estimate.csv")).unwrap();
    assert_eq!(table.lines().count(), 202);
}

#[test]
fn metrics_rejects_misaligned_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = simulated(dir.path(), 2.0);
    c.mode = ModeSelection::Ekf;
    let out = dir.path().join("est");
    estimate(&c, &out).unwrap();
    let mut short = c.clone();
    short.sim.duration = 1.0;
    simulate(&short, &dir.path().join("short")).unwrap();
    assert!(metrics(&[out.join("estimate.csv")], &dir.path().join("short/truth.csv"), &out).is_err());
}

#[test]
fn coarse_alignment_recovers_noise_free_attitude() {
    let mut c = RunConfig::default();
    c.sim.duration = 0.5;
    let mut sim = c.coning().noiseless();
    sim.earth = c.earth;
    let out = synthesize(&sim).unwrap();
    let q = coarse_alignment(&out.samples, &c).unwrap();
    let err = rotation_between(&q, &out.truth[0].q);
    assert!(err < 1e-9, "alignment error {err} rad");
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_attestpo");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"sim": {"duration": 1.0}}"#).unwrap();
    let status = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("sim"))
        .status()
        .unwrap();
    assert!(status.success());
    let status = Command::new(bin)
        .args(["estimate", "--mode", "qua", "--config"])
        .arg(&cfg)
        .arg("--imu")
        .arg(dir.path().join("sim/imu.csv"))
        .arg("--out")
        .arg(dir.path().join("est"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("est/estimate.csv").exists());

    let status = Command::new(bin)
        .args(["simulate", "--window", "-1", "--out"])
        .arg(dir.path().join("bad"))
        .status()
        .unwrap();
    assert!(!status.success());
}

#[test]
fn small_montecarlo_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::default();
    c.sim.duration = 1.0;
    c.runs = 2;
    c.prior.attitude_sigma_deg = [5.0, 10.0, 5.0];
    let out = dir.path().join("mc");
    let ok = attestpo_cli::commands::montecarlo(&c, &out).unwrap();
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["algorithms"].as_array().unwrap().len(), 3);
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(ok, summary["all_converged"].as_bool().unwrap());
    let table = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 3 * 6);
    assert_eq!(table.lines().count(), 102);
}
