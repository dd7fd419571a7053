//! CSV ingestion and export.
//!
//! Floats are written with 17 significant digits so a re-read reproduces
//! every value bit for bit.

use std::path::Path;

use attestpo::sim::TruthState;
use attestpo::{DetectorConfig, EarthModel, ErrorStateCov, EstimateState, ImuSample, Quaternion};
use nalgebra::Vector3;

use crate::error::{CliError, Result};

pub const IMU_COLUMNS: [&str; 10] = ["t", "gx", "gy", "gz", "ax", "ay", "az", "mx", "my", "mz"];
pub const TRUTH_COLUMNS: [&str; 11] = [
    "t", "qw", "qx", "qy", "qz", "bax", "bay", "baz", "bgx", "bgy", "bgz",
];
pub const COV_COLUMNS: [&str; 9] = ["p00", "p11", "p22", "p33", "p44", "p55", "p66", "p77", "p88"];

/// Magnetometer norms further than this from one trigger a warning.
const MAG_NORM_WARNING: f64 = 0.2;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rows of the requested columns, by name, with their 1-based data row
/// numbers. Extra columns are ignored.
pub fn read_columns(path: &Path, columns: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| CliError::csv(path, e))?.clone();
    let mut index = Vec::with_capacity(columns.len());
    for &name in columns {
        match headers.iter().position(|h| h == name) {
            Some(i) => index.push(i),
            None => return Err(CliError::schema(path, format!("missing column `{name}`"))),
        }
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::csv(path, e))?;
        let row = k + 1;
        let mut values = Vec::with_capacity(columns.len());
        for (&i, &name) in index.iter().zip(columns) {
            let field = record.get(i).unwrap_or("");
            let x: f64 = field.parse().map_err(|_| {
                CliError::schema(path, format!("row {row}, column `{name}`: `{field}` is not a number"))
            })?;
            if !x.is_finite() {
                return Err(CliError::schema(path, format!("row {row}, column `{name}`: non-finite value")));
            }
            values.push(x);
        }
        rows.push((row, values));
    }
    Ok(rows)
}

/// Sorts rows by their first value and rejects repeated times.
fn sort_by_time(path: &Path, rows: &mut [(usize, Vec<f64>)]) -> Result<()> {
    rows.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]));
    for pair in rows.windows(2) {
        if pair[1].1[0] <= pair[0].1[0] {
            return Err(CliError::NonMonotoneTime {
                path: path.to_path_buf(),
                row: pair[1].0,
                t: pair[1].1[0],
            });
        }
    }
    Ok(())
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt_f64))
            .map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn vec3(v: &[f64]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Reads an IMU log, sorted by time, with detector flags evaluated.
pub fn ingest_imu_csv(path: &Path, earth: &EarthModel, detectors: &DetectorConfig) -> Result<Vec<ImuSample>> {
    let mut rows = read_columns(path, &IMU_COLUMNS)?;
    if rows.is_empty() {
        return Err(CliError::schema(path, "no data rows"));
    }
    sort_by_time(path, &mut rows)?;
    let mut off_norm = Vec::new();
    let samples = rows
        .iter()
        .map(|(row, v)| {
            let mag = vec3(&v[7..10]);
            if (mag.norm() - 1.0).abs() > MAG_NORM_WARNING {
                off_norm.push(*row);
            }
            ImuSample::detect(v[0], vec3(&v[1..4]), vec3(&v[4..7]), mag, earth, detectors)
        })
        .collect();
    if let Some(first) = off_norm.first() {
        log::warn!(
            "{}: magnetometer norm deviates from 1 by more than {MAG_NORM_WARNING} in {} rows (first: row {first}); \
             is the magnetometer normalized?",
            path.display(),
            off_norm.len()
        );
    }
    Ok(samples)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    write_rows(
        path,
        &IMU_COLUMNS,
        samples.iter().map(|s| {
            let mut r = vec![s.t];
            r.extend(s.gyro.iter().chain(&s.accel).chain(&s.mag));
            r
        }),
    )
}

fn state_row(t: f64, q: &Quaternion, ba: &Vector3<f64>, bg: &Vector3<f64>) -> Vec<f64> {
    let mut r = vec![t];
    r.extend(q.to_vec4().iter());
    r.extend(ba.iter().chain(bg));
    r
}

pub fn write_truth_csv(path: &Path, truth: &[TruthState]) -> Result<()> {
    write_rows(
        path,
        &TRUTH_COLUMNS,
        truth
            .iter()
            .map(|s| state_row(s.t, &s.q, &s.accel_bias, &s.gyro_bias)),
    )
}

/// Reads attitude and bias columns; estimate files qualify as well.
pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthState>> {
    let mut rows = read_columns(path, &TRUTH_COLUMNS)?;
    sort_by_time(path, &mut rows)?;
    Ok(rows
        .iter()
        .map(|(_, v)| TruthState {
            t: v[0],
            q: Quaternion::new(v[1], v[2], v[3], v[4]),
            accel_bias: vec3(&v[5..8]),
            gyro_bias: vec3(&v[8..11]),
        })
        .collect())
}

pub fn estimate_header() -> Vec<&'static str> {
    TRUTH_COLUMNS.iter().chain(&COV_COLUMNS).copied().collect()
}

pub fn write_estimate_csv(path: &Path, states: &[EstimateState]) -> Result<()> {
    write_rows(
        path,
        &estimate_header(),
        states.iter().map(|s| {
            let mut r = state_row(s.t, &s.q, &s.accel_bias, &s.gyro_bias);
            r.extend((0..9).map(|i| s.cov[(i, i)]));
            r
        }),
    )
}

/// Reads an estimate file; only the covariance diagonal is stored.
pub fn read_estimate_csv(path: &Path) -> Result<Vec<EstimateState>> {
    let mut rows = read_columns(path, &estimate_header())?;
    sort_by_time(path, &mut rows)?;
    Ok(rows
        .iter()
        .map(|(_, v)| EstimateState {
            t: v[0],
            q: Quaternion::new(v[1], v[2], v[3], v[4]),
            accel_bias: vec3(&v[5..8]),
            gyro_bias: vec3(&v[8..11]),
            cov: ErrorStateCov::from_diagonal(&nalgebra::SVector::<f64, 9>::from_column_slice(&v[11..20])),
        })
        .collect())
}
