use nalgebra::{DVector, Vector3};

use crate::chebyshev::{
    affine_time_map, affine_time_unmap, cheb_basis, cheb_basis_derivative,
    clenshaw_curtis_weights,
};
use crate::efh::{efh_build_extended, RationalInterpolant};
use crate::error::{Error, Result};
use crate::sensors::ImuSample;

/// Samples spanning one window `[t₀, t_M]`.
///
/// Gyro readings of all samples feed the rate interpolation. Accelerometer and
/// magnetometer readings are used from `first_measurement` on, so that a
/// sample shared by two adjacent windows is only counted once.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    pub samples: Vec<ImuSample>,
    pub first_measurement: usize,
}

impl ImuWindow {
    pub fn new(samples: Vec<ImuSample>, first_measurement: usize) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::domain("a window needs at least two samples"));
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::domain("window times must increase"));
        }
        if first_measurement > samples.len() {
            return Err(Error::domain("measurement offset beyond window"));
        }
        Ok(Self {
            samples,
            first_measurement,
        })
    }

    /// Window using the measurements of every sample.
    pub fn full(samples: Vec<ImuSample>) -> Result<Self> {
        Self::new(samples, 0)
    }

    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn sample_period(&self) -> f64 {
        (self.t_end() - self.t_start()) / (self.samples.len() - 1) as f64
    }

    /// Samples whose accelerometer and magnetometer readings belong here.
    pub fn measurement_samples(&self) -> &[ImuSample] {
        &self.samples[self.first_measurement..]
    }

    /// Number of valid accelerometer samples.
    pub fn accel_count(&self) -> usize {
        self.measurement_samples().iter().filter(|s| s.accel_valid).count()
    }

    /// Number of valid magnetometer samples.
    pub fn mag_count(&self) -> usize {
        self.measurement_samples().iter().filter(|s| s.mag_valid).count()
    }
}

/// A measurement instant inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPoint {
    pub tau: f64,
    pub basis: DVector<f64>,
    pub accel: Option<Vector3<f64>>,
    pub mag: Option<Vector3<f64>>,
}

/// Time mapping, collocation nodes and precomputed basis values of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGeometry {
    pub t_start: f64,
    pub t_end: f64,
    /// `dτ/dt`.
    pub time_scale: f64,
    pub order: usize,
    pub nodes: Vec<f64>,
    /// Square root of the quadrature weight in units of sample periods,
    /// `sqrt((t_M - t₀)/2 · wᵢ / T_s)`.
    pub node_scale: Vec<f64>,
    pub node_basis: Vec<DVector<f64>>,
    pub node_basis_derivative: Vec<DVector<f64>>,
    /// Interpolated gyro reading at each node.
    pub node_gyro: Vec<Vector3<f64>>,
    pub start_basis: DVector<f64>,
    pub measurements: Vec<MeasurementPoint>,
}

impl WindowGeometry {
    pub fn new(
        window: &ImuWindow,
        order: usize,
        quad_points: usize,
        efh_degree: usize,
        efh_extension: usize,
    ) -> Result<Self> {
        if quad_points < 2 {
            return Err(Error::domain("need at least two collocation points"));
        }
        let t0 = window.t_start();
        let tm = window.t_end();
        let rule = clenshaw_curtis_weights(quad_points - 1)?;
        let times: Vec<f64> = window.samples.iter().map(|s| s.t).collect();
        let gyro: Vec<Vector3<f64>> = window.samples.iter().map(|s| s.gyro).collect();
        let degree = efh_degree.min(window.samples.len() - 1);
        let interp: RationalInterpolant = efh_build_extended(&times, &gyro, degree, efh_extension)?;
        let half = 0.5 * (tm - t0);
        let ts = window.sample_period();

        let mut node_scale = Vec::with_capacity(rule.points.len());
        let mut node_basis = Vec::with_capacity(rule.points.len());
        let mut node_basis_derivative = Vec::with_capacity(rule.points.len());
        let mut node_gyro = Vec::with_capacity(rule.points.len());
        for (&tau, &w) in rule.points.iter().zip(&rule.weights) {
            node_scale.push((half * w / ts).sqrt());
            node_basis.push(cheb_basis(tau, order)?);
            node_basis_derivative.push(cheb_basis_derivative(tau, order)?);
            let t = affine_time_unmap(tau, t0, tm)?.clamp(t0, tm);
            node_gyro.push(interp.eval(t)?);
        }

        let mut measurements = Vec::new();
        for s in window.measurement_samples() {
            if !(s.accel_valid || s.mag_valid) {
                continue;
            }
            let tau = affine_time_map(s.t, t0, tm)?.clamp(-1.0, 1.0);
            measurements.push(MeasurementPoint {
                tau,
                basis: cheb_basis(tau, order)?,
                accel: s.accel_valid.then_some(s.accel),
                mag: s.mag_valid.then_some(s.mag),
            });
        }

        Ok(Self {
            t_start: t0,
            t_end: tm,
            time_scale: 2.0 / (tm - t0),
            order,
            nodes: rule.points,
            node_scale,
            node_basis,
            node_basis_derivative,
            node_gyro,
            start_basis: cheb_basis(-1.0, order)?,
            measurements,
        })
    }

    pub fn accel_count(&self) -> usize {
        self.measurements.iter().filter(|m| m.accel.is_some()).count()
    }

    pub fn mag_count(&self) -> usize {
        self.measurements.iter().filter(|m| m.mag.is_some()).count()
    }
}
