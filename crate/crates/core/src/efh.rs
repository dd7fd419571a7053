//! Extended Floater-Hormann barycentric rational interpolation on equispaced
//! samples.
//!
//! The sample grid is padded with phantom nodes whose values are
//! extrapolated from a local polynomial through the boundary samples; the
//! Floater-Hormann weights of blending degree `d` are then built on the padded
//! grid. Evaluation is restricted to half a spacing beyond the real samples.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Relative jitter tolerated on the sample spacing.
pub const SPACING_TOLERANCE: f64 = 1e-9;

/// Default blending degree.
pub const DEFAULT_DEGREE: usize = 3;

/// Default number of phantom nodes appended at each boundary.
pub const DEFAULT_EXTENSION: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RationalInterpolant {
    /// Node times including phantom nodes.
    nodes: Vec<f64>,
    values: Vec<Vector3<f64>>,
    bary_weights: Vec<f64>,
    degree: usize,
    /// Index range of the real samples inside `nodes`.
    first_real: usize,
    last_real: usize,
    spacing: f64,
}

impl RationalInterpolant {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of phantom nodes on each side.
    pub fn extension(&self) -> usize {
        self.first_real
    }

    pub fn bary_weights(&self) -> &[f64] {
        &self.bary_weights
    }

    /// Admissible evaluation range.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.nodes[self.first_real] - 0.5 * self.spacing,
            self.nodes[self.last_real] + 0.5 * self.spacing,
        )
    }

    pub fn eval(&self, t: f64) -> Result<Vector3<f64>> {
        efh_eval(self, t)
    }
}

/// Builds the interpolant with the default phantom extension.
pub fn efh_build(times: &[f64], samples: &[Vector3<f64>], d: usize) -> Result<RationalInterpolant> {
    efh_build_extended(times, samples, d, DEFAULT_EXTENSION)
}

/// Builds the interpolant with `extension` phantom nodes per boundary.
///
/// Extension needs at least `d + 3` samples; with fewer the plain
/// Floater-Hormann interpolant on the samples is returned.
pub fn efh_build_extended(
    times: &[f64],
    samples: &[Vector3<f64>],
    d: usize,
    extension: usize,
) -> Result<RationalInterpolant> {
    let n = times.len();
    if n != samples.len() {
        return Err(Error::domain("times and samples differ in length"));
    }
    if n < d + 1 || n < 2 {
        return Err(Error::domain(format!(
            "{n} samples cannot support blending degree {d}"
        )));
    }
    let spacing = (times[n - 1] - times[0]) / (n - 1) as f64;
    if spacing <= 0.0 || !spacing.is_finite() {
        return Err(Error::domain("sample times must be strictly increasing"));
    }
    for (k, &t) in times.iter().enumerate() {
        let expected = times[0] + k as f64 * spacing;
        if (t - expected).abs() > SPACING_TOLERANCE * spacing.max(expected.abs()) {
            return Err(Error::domain(format!(
                "sample {k} at {t} breaks equispacing (expected {expected})"
            )));
        }
    }

    let ext = if n >= d + 3 { extension } else { 0 };
    let total = n + 2 * ext;
    let mut nodes = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);

    // Phantom values: polynomial of degree d + 1 through the nearest d + 2
    // samples, evaluated in index coordinates.
    let m = (d + 2).min(n);
    let left: Vec<usize> = (0..m).collect();
    let right: Vec<usize> = (n - m..n).collect();
    for j in (1..=ext).rev() {
        let x = -(j as f64);
        nodes.push(times[0] - j as f64 * spacing);
        values.push(lagrange_index_eval(&left, samples, x));
    }
    for (k, s) in samples.iter().enumerate() {
        nodes.push(times[0] + k as f64 * spacing);
        values.push(*s);
    }
    for j in 1..=ext {
        let x = (n - 1 + j) as f64;
        nodes.push(times[0] + (n - 1 + j) as f64 * spacing);
        values.push(lagrange_index_eval(&right, samples, x));
    }

    let bary_weights = floater_hormann_weights(total, d.min(total - 1));
    Ok(RationalInterpolant {
        nodes,
        values,
        bary_weights,
        degree: d,
        first_real: ext,
        last_real: ext + n - 1,
        spacing,
    })
}

/// Lagrange polynomial through samples at integer positions `idx`, evaluated at `x`.
fn lagrange_index_eval(idx: &[usize], samples: &[Vector3<f64>], x: f64) -> Vector3<f64> {
    let mut acc = Vector3::zeros();
    for (a, &i) in idx.iter().enumerate() {
        let mut basis = 1.0;
        for (b, &j) in idx.iter().enumerate() {
            if a != b {
                basis *= (x - j as f64) / (i as f64 - j as f64);
            }
        }
        acc += basis * samples[i];
    }
    acc
}

/// Floater-Hormann weights for `count` equispaced nodes (index coordinates).
///
/// `w_k = Σ_{i ∈ J_k} (-1)^i Π_{j=i..i+d, j≠k} 1/(k - j)`.
fn floater_hormann_weights(count: usize, d: usize) -> Vec<f64> {
    let n = count - 1;
    (0..=n)
        .map(|k| {
            let lo = k.saturating_sub(d);
            let hi = k.min(n - d);
            let mut w = 0.0;
            for i in lo..=hi {
                let mut prod = 1.0;
                for j in i..=i + d {
                    if j != k {
                        prod /= k as f64 - j as f64;
                    }
                }
                w += if i % 2 == 0 { prod } else { -prod };
            }
            w
        })
        .collect()
}

pub fn efh_eval(itp: &RationalInterpolant, t: f64) -> Result<Vector3<f64>> {
    let (lo, hi) = itp.domain();
    if !(lo..=hi).contains(&t) {
        return Err(Error::domain(format!(
            "t = {t} outside interpolation range [{lo}, {hi}]"
        )));
    }
    let snap = 1e-12 * itp.spacing;
    let mut num = Vector3::zeros();
    let mut den = 0.0;
    for ((&x, v), &w) in itp.nodes.iter().zip(&itp.values).zip(&itp.bary_weights) {
        let diff = t - x;
        if diff.abs() <= snap {
            return Ok(*v);
        }
        let c = w / diff;
        num += c * v;
        den += c;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize, t0: f64, h: f64) -> Vec<f64> {
        (0..n).map(|k| t0 + k as f64 * h).collect()
    }

    fn scalar(v: f64) -> Vector3<f64> {
        Vector3::new(v, 0.0, 0.0)
    }

    #[test]
    fn constant_is_reproduced() {
        let t = grid(11, 0.0, 0.01);
        let c = Vector3::new(0.3, -1.0, 2.0);
        let itp = efh_build(&t, &vec![c; 11], 3).unwrap();
        for k in 0..=40 {
            let x = -0.005 + k as f64 * 0.0275;
            assert_relative_eq!(itp.eval(x.min(0.105)).unwrap(), c, epsilon = 1e-13);
        }
    }

    #[test]
    fn quadratic_off_node() {
        let t = grid(11, 0.0, 0.1);
        let s: Vec<_> = t.iter().map(|&x| scalar(x * x)).collect();
        for d in 2..=4 {
            let itp = efh_build(&t, &s, d).unwrap();
            assert!((itp.eval(0.05).unwrap().x - 0.0025).abs() < 1e-10, "d = {d}");
        }
    }

    #[test]
    fn nodes_are_interpolated_exactly() {
        let t = grid(9, 1.0, 0.01);
        let s: Vec<_> = t
            .iter()
            .map(|&x| Vector3::new(x.sin(), x.cos(), x * x * x))
            .collect();
        let itp = efh_build(&t, &s, 3).unwrap();
        for (x, v) in t.iter().zip(&s) {
            assert_eq!(itp.eval(*x).unwrap(), *v);
        }
    }

    #[test]
    fn linear_midpoint_is_mean() {
        let t = grid(11, 0.0, 0.01);
        let s: Vec<_> = t.iter().map(|&x| scalar(3.0 * x - 1.0)).collect();
        let itp = efh_build(&t, &s, 3).unwrap();
        let mid = itp.eval(0.045).unwrap().x;
        assert!((mid - 0.5 * (s[4].x + s[5].x)).abs() < 1e-12);
    }

    #[test]
    fn polynomial_reproduction_up_to_degree() {
        let t = grid(11, 0.0, 0.01);
        for d in 0..=5 {
            let s: Vec<_> = t
                .iter()
                .map(|&x| scalar((0..=d).map(|p| (p as f64 + 1.0) * (10.0 * x).powi(p as i32)).sum()))
                .collect();
            let itp = efh_build(&t, &s, d).unwrap();
            for k in 0..50 {
                let x = -0.004 + k as f64 * 0.00216;
                let exact: f64 = (0..=d).map(|p| (p as f64 + 1.0) * (10.0 * x).powi(p as i32)).sum();
                assert!((itp.eval(x).unwrap().x - exact).abs() < 1e-10, "d = {d}, x = {x}");
            }
        }
    }

    #[test]
    fn smooth_signal_accuracy() {
        // sin(2πt) sampled at 100 Hz over a 0.1 s window, dense comparison in the interior
        let t = grid(11, 0.0, 0.01);
        let s: Vec<_> = t
            .iter()
            .map(|&x| scalar((2.0 * std::f64::consts::PI * x).sin()))
            .collect();
        let worst = |d: usize| {
            let itp = efh_build(&t, &s, d).unwrap();
            (1..200)
                .map(|k| 0.01 + 0.08 * k as f64 / 200.0)
                .map(|x| (itp.eval(x).unwrap().x - (2.0 * std::f64::consts::PI * x).sin()).abs())
                .fold(0.0, f64::max)
        };
        // blending degree 3 is limited by its local quartic error term
        assert!(worst(3) < 1e-6, "d = 3: {}", worst(3));
        assert!(worst(6) < 1e-8, "d = 6: {}", worst(6));
    }

    #[test]
    fn monotone_data_does_not_overshoot() {
        let t = grid(21, 0.0, 0.05);
        let f = |x: f64| (8.0 * (x - 0.5)).tanh();
        let s: Vec<_> = t.iter().map(|&x| scalar(f(x))).collect();
        let itp = efh_build(&t, &s, 3).unwrap();
        let (lo, hi) = (s[0].x, s[20].x);
        let range = hi - lo;
        for k in 0..=400 {
            let x = k as f64 / 400.0;
            let v = itp.eval(x).unwrap().x;
            assert!(v <= hi + 0.01 * range && v >= lo - 0.01 * range, "x = {x}: {v}");
        }
    }

    #[test]
    fn components_are_independent() {
        let t = grid(11, 0.0, 0.01);
        let s: Vec<_> = t
            .iter()
            .map(|&x| Vector3::new((3.0 * x).sin(), x.exp(), 1.0 / (1.0 + x)))
            .collect();
        let full = efh_build(&t, &s, 3).unwrap();
        for c in 0..3 {
            let single: Vec<_> = s.iter().map(|v| scalar(v[c])).collect();
            let itp = efh_build(&t, &single, 3).unwrap();
            for k in 0..30 {
                let x = 0.0033 * k as f64;
                assert_relative_eq!(full.eval(x).unwrap()[c], itp.eval(x).unwrap().x, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn errors() {
        let t = grid(3, 0.0, 0.01);
        let s = vec![Vector3::zeros(); 3];
        assert!(efh_build(&t, &s, 3).is_err());
        let bad = vec![0.0, 0.01, 0.025, 0.03];
        assert!(efh_build(&bad, &[Vector3::zeros(); 4], 2).is_err());
        let t = grid(11, 0.0, 0.01);
        let itp = efh_build(&t, &vec![Vector3::zeros(); 11], 3).unwrap();
        assert!(itp.eval(-0.006).is_err());
        assert!(itp.eval(0.1051).is_err());
        assert!(itp.eval(0.105).is_ok());
    }

    #[test]
    fn short_input_falls_back_to_plain_weights() {
        let t = grid(5, 0.0, 0.01);
        let itp = efh_build(&t, &[Vector3::zeros(); 5], 3).unwrap();
        assert_eq!(itp.extension(), 0);
        let t = grid(6, 0.0, 0.01);
        let itp = efh_build(&t, &[Vector3::zeros(); 6], 3).unwrap();
        assert_eq!(itp.extension(), DEFAULT_EXTENSION);
    }
}
