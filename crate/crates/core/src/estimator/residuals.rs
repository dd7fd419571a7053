//! Weighted residuals of a window and their Jacobians.
//!
//! Parameter vector layout: the column-stacked series coefficients (4 rows per
//! coefficient for quaternions, 3 for Rodrigues vectors), then the
//! accelerometer bias and the gyro bias. Residual layout: 9 prior rows, 3 rows
//! per collocation node, 3 rows per valid accelerometer sample, 3 rows per
//! valid magnetometer sample and, for constrained quaternion solves, one row
//! per node for the augmented unit-norm penalty.

use nalgebra::{
    DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, Matrix4x3, SMatrix, SVector, Vector3, Vector4,
};

use super::weights::{build_weights, WeightSet};
use super::window::{ImuWindow, WindowGeometry};
use super::{EstimatorConfig, JacobianMode, Parameterization};
use crate::chebyshev::ChebyshevSeries;
use crate::error::{Error, Result};
use crate::rotmath::{
    conj_rotate, conj_rotate_jacobian, quat_left_matrix, quat_right_matrix, skew, Quaternion,
    RODRIGUES_SINGULARITY,
};
use crate::sensors::{body_rate, earth_rate_n, gravity_n, mag_field_n, EarthModel};
use crate::track::WindowPrior;

/// Everything needed to evaluate the cost of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowProblem {
    pub geometry: WindowGeometry,
    pub prior: WindowPrior,
    pub weights: WeightSet,
    pub model: EarthModel,
    pub jacobian: JacobianMode,
}

impl WindowProblem {
    pub fn new(window: &ImuWindow, prior: &WindowPrior, config: &EstimatorConfig) -> Result<Self> {
        prior.validate()?;
        Ok(Self {
            geometry: WindowGeometry::new(
                window,
                config.order,
                config.quad_points(),
                config.efh_degree,
                config.efh_extension,
            )?,
            prior: *prior,
            weights: build_weights(prior, &config.noise)?,
            model: config.earth,
            jacobian: config.jacobian,
        })
    }

    /// Unconstrained cost residuals at `x` and, on request, their Jacobian
    /// computed as configured by `self.jacobian`.
    pub fn residuals(
        &self,
        param: &Parameterization,
        x: &DVector<f64>,
        want_jacobian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        if x.len() != self.layout(param).params() {
            return Err(Error::domain("parameter vector has the wrong length"));
        }
        evaluate(self, param, x, None, want_jacobian)
    }

    pub fn layout(&self, param: &Parameterization) -> ProblemLayout {
        let coef_rows = match param {
            Parameterization::Quaternion => 4,
            Parameterization::Rodrigues { .. } => 3,
        };
        ProblemLayout {
            coef_rows,
            order: self.geometry.order,
            nodes: self.geometry.nodes.len(),
            accel: self.geometry.accel_count(),
            mag: self.geometry.mag_count(),
        }
    }
}

/// Sizes and offsets of the parameter and residual vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemLayout {
    pub coef_rows: usize,
    pub order: usize,
    pub nodes: usize,
    pub accel: usize,
    pub mag: usize,
}

impl ProblemLayout {
    pub fn coef_len(&self) -> usize {
        self.coef_rows * (self.order + 1)
    }

    pub fn params(&self) -> usize {
        self.coef_len() + 6
    }

    pub fn accel_bias_offset(&self) -> usize {
        self.coef_len()
    }

    pub fn gyro_bias_offset(&self) -> usize {
        self.coef_len() + 3
    }

    /// Residual rows without constraint penalties.
    pub fn cost_rows(&self) -> usize {
        9 + 3 * (self.nodes + self.accel + self.mag)
    }

    pub fn pack(&self, coeffs: &ChebyshevSeries, b_a: &Vector3<f64>, b_g: &Vector3<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.params());
        x.rows_mut(0, self.coef_len()).copy_from_slice(coeffs.coeffs.as_slice());
        x.fixed_rows_mut::<3>(self.accel_bias_offset()).copy_from(b_a);
        x.fixed_rows_mut::<3>(self.gyro_bias_offset()).copy_from(b_g);
        x
    }

    pub fn unpack(&self, x: &DVector<f64>) -> (ChebyshevSeries, Vector3<f64>, Vector3<f64>) {
        (
            ChebyshevSeries::from_vec(self.coef_rows, self.order, &x.as_slice()[..self.coef_len()]),
            x.fixed_rows::<3>(self.accel_bias_offset()).into_owned(),
            x.fixed_rows::<3>(self.gyro_bias_offset()).into_owned(),
        )
    }
}

/// Multiplier state of the augmented unit-norm penalty.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Penalty {
    pub mu: f64,
    pub lambda: DVector<f64>,
}

fn rows123(m: &Matrix4<f64>) -> Matrix3x4<f64> {
    m.fixed_rows::<3>(1).into_owned()
}

fn conj4(q: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(q[0], -q[1], -q[2], -q[3])
}

/// Weighted prior residual `W_x0ᵀ [2 vec(q(τ₀) ∘ q₀*); b_a - b_a0; b_g - b_g0]`.
pub fn residual_prior(
    q_start: &Quaternion,
    accel_bias: &Vector3<f64>,
    gyro_bias: &Vector3<f64>,
    prior: &WindowPrior,
    w_prior: &SMatrix<f64, 9, 9>,
) -> SVector<f64, 9> {
    w_prior.transpose() * prior_error(&q_start.to_vec4(), accel_bias, gyro_bias, prior)
}

fn prior_error(
    q_start: &Vector4<f64>,
    accel_bias: &Vector3<f64>,
    gyro_bias: &Vector3<f64>,
    prior: &WindowPrior,
) -> SVector<f64, 9> {
    let q0c = conj4(&prior.q0.to_vec4());
    let dq = quat_right_matrix(&q0c) * q_start;
    let mut e = SVector::<f64, 9>::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&(2.0 * dq.fixed_rows::<3>(1)));
    e.fixed_rows_mut::<3>(3).copy_from(&(accel_bias - prior.accel_bias));
    e.fixed_rows_mut::<3>(6).copy_from(&(gyro_bias - prior.gyro_bias));
    e
}

/// Gyro reading predicted by a quaternion path with value `q` and time
/// derivative `q_dot`.
fn quat_gyro_model(q: &Vector4<f64>, q_dot: &Vector4<f64>, b_g: &Vector3<f64>, w_ie: &Vector3<f64>) -> Vector3<f64> {
    body_rate(q, q_dot).fixed_rows::<3>(1).into_owned() + conj_rotate(q, w_ie) + b_g
}

/// Weighted gyro residual of a quaternion series at `tau`; `time_scale` is
/// `dτ/dt`.
pub fn residual_dynamics_quat(
    d: &ChebyshevSeries,
    gyro_bias: &Vector3<f64>,
    y_g: &Vector3<f64>,
    tau: f64,
    time_scale: f64,
    w_g: &Matrix3<f64>,
    model: &EarthModel,
) -> Result<Vector3<f64>> {
    let q = vec4(&d.eval(tau)?);
    let q_dot = vec4(&d.eval_derivative(tau)?) * time_scale;
    Ok(w_g.transpose() * (y_g - quat_gyro_model(&q, &q_dot, gyro_bias, &earth_rate_n(model))))
}

/// Body rate of the Rodrigues path `g(t)` with derivative `ġ`.
fn rodrigues_rate(g: &Vector3<f64>, g_dot: &Vector3<f64>) -> Vector3<f64> {
    (4.0 * g_dot - 2.0 * g.cross(g_dot)) / (4.0 + g.norm_squared())
}

/// `Δq(g) = [2, g] / sqrt(4 + ‖g‖²)` as a raw vector.
fn delta_quat(g: &Vector3<f64>) -> Vector4<f64> {
    let n = (4.0 + g.norm_squared()).sqrt();
    Vector4::new(2.0, g.x, g.y, g.z) / n
}

fn delta_quat_jacobian(g: &Vector3<f64>) -> Matrix4x3<f64> {
    let n2 = 4.0 + g.norm_squared();
    let n = n2.sqrt();
    let mut j = Matrix4x3::zeros();
    j.fixed_rows_mut::<3>(1).copy_from(&(Matrix3::identity() / n));
    let v = Vector4::new(2.0, g.x, g.y, g.z);
    j -= v * g.transpose() / (n2 * n);
    j
}

/// Weighted gyro residual of a Rodrigues series relative to `q_ref`.
#[allow(clippy::too_many_arguments)]
pub fn residual_dynamics_rod(
    h: &ChebyshevSeries,
    q_ref: &Quaternion,
    gyro_bias: &Vector3<f64>,
    y_g: &Vector3<f64>,
    tau: f64,
    time_scale: f64,
    w_g: &Matrix3<f64>,
    model: &EarthModel,
) -> Result<Vector3<f64>> {
    let g = vec3(&h.eval(tau)?);
    let g_dot = vec3(&h.eval_derivative(tau)?) * time_scale;
    let w_ref = conj_rotate(&q_ref.to_vec4(), &earth_rate_n(model));
    let pred = rodrigues_rate(&g, &g_dot) + conj_rotate(&delta_quat(&g), &w_ref) + gyro_bias;
    Ok(w_g.transpose() * (y_g - pred))
}

/// Weighted accelerometer residual `W_aᵀ (y_a + q* ∘ γ ∘ q - b_a)`.
pub fn residual_accel(
    q: &Vector4<f64>,
    accel_bias: &Vector3<f64>,
    y_a: &Vector3<f64>,
    w_a: &Matrix3<f64>,
    model: &EarthModel,
) -> Vector3<f64> {
    w_a.transpose() * (y_a + conj_rotate(q, &gravity_n(model)) - accel_bias)
}

/// Weighted magnetometer residual `W_mᵀ (y_m - q* ∘ m ∘ q)`.
pub fn residual_mag(q: &Vector4<f64>, y_m: &Vector3<f64>, w_m: &Matrix3<f64>, model: &EarthModel) -> Vector3<f64> {
    w_m.transpose() * (y_m - conj_rotate(q, &mag_field_n(model)))
}

fn vec4(v: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(v[0], v[1], v[2], v[3])
}

fn vec3(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Adds `local · basisⱼ` into the coefficient block `j` of each basis entry.
fn scatter(jac: &mut DMatrix<f64>, row: usize, local: &DMatrix<f64>, basis: &DVector<f64>) {
    let width = local.ncols();
    for (j, &f) in basis.iter().enumerate() {
        if f != 0.0 {
            for c in 0..width {
                for r in 0..local.nrows() {
                    jac[(row + r, width * j + c)] += f * local[(r, c)];
                }
            }
        }
    }
}

fn dyn_local<const C: usize>(m: &nalgebra::SMatrix<f64, 3, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, C, m.as_slice())
}

/// Residual vector and optional Jacobian.
pub(crate) type Evaluation = (DVector<f64>, Option<DMatrix<f64>>);

/// Cost rows (and penalty rows when `penalty` is set) of a quaternion window.
pub(crate) fn quat_residuals(
    problem: &WindowProblem,
    x: &DVector<f64>,
    penalty: Option<&Penalty>,
    want_jac: bool,
) -> Result<Evaluation> {
    let layout = problem.layout(&Parameterization::Quaternion);
    let geo = &problem.geometry;
    let w = &problem.weights;
    let (d, b_a, b_g) = layout.unpack(x);
    let rows = layout.cost_rows() + if penalty.is_some() { layout.nodes } else { 0 };
    let mut r = DVector::zeros(rows);
    let mut jac = want_jac.then(|| DMatrix::zeros(rows, layout.params()));
    let (ba_col, bg_col) = (layout.accel_bias_offset(), layout.gyro_bias_offset());
    let w_ie = earth_rate_n(&problem.model);
    let gamma = gravity_n(&problem.model);
    let m_n = mag_field_n(&problem.model);

    // prior
    let q_start = vec4(&(&d.coeffs * &geo.start_basis));
    let wt = problem.weights.prior.transpose();
    r.fixed_rows_mut::<9>(0)
        .copy_from(&(wt * prior_error(&q_start, &b_a, &b_g, &problem.prior)));
    if let Some(jac) = jac.as_mut() {
        let q0c = conj4(&problem.prior.q0.to_vec4());
        let de_dq = 2.0 * rows123(&quat_right_matrix(&q0c));
        let local = wt.fixed_columns::<3>(0) * de_dq;
        scatter(jac, 0, &DMatrix::from_column_slice(9, 4, local.as_slice()), &geo.start_basis);
        jac.view_mut((0, ba_col), (9, 3)).copy_from(&wt.fixed_columns::<3>(3));
        jac.view_mut((0, bg_col), (9, 3)).copy_from(&wt.fixed_columns::<3>(6));
    }

    // gyro dynamics at the collocation nodes
    let mut row = 9;
    for i in 0..layout.nodes {
        let f = &geo.node_basis[i];
        let fd = &geo.node_basis_derivative[i];
        let q = vec4(&(&d.coeffs * f));
        let q_dot = vec4(&(&d.coeffs * fd)) * geo.time_scale;
        let scale = geo.node_scale[i];
        let wg = w.gyro.transpose() * scale;
        let pred = quat_gyro_model(&q, &q_dot, &b_g, &w_ie);
        r.fixed_rows_mut::<3>(row).copy_from(&(wg * (geo.node_gyro[i] - pred)));
        if let Some(jac) = jac.as_mut() {
            let flip = Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, -1.0, -1.0));
            let dp_dq = 2.0 * rows123(&(quat_right_matrix(&q_dot) * flip)) + conj_rotate_jacobian(&q, &w_ie);
            let dp_dqdot = 2.0 * rows123(&quat_left_matrix(&conj4(&q)));
            scatter(jac, row, &dyn_local(&(-wg * dp_dq)), f);
            scatter(jac, row, &dyn_local(&(-wg * dp_dqdot * geo.time_scale)), fd);
            jac.view_mut((row, bg_col), (3, 3)).copy_from(&(-wg));
        }
        row += 3;
    }

    // accelerometer then magnetometer samples
    for m in &geo.measurements {
        if let Some(y_a) = m.accel {
            let q = vec4(&(&d.coeffs * &m.basis));
            r.fixed_rows_mut::<3>(row)
                .copy_from(&residual_accel(&q, &b_a, &y_a, &w.accel, &problem.model));
            if let Some(jac) = jac.as_mut() {
                let local = w.accel.transpose() * conj_rotate_jacobian(&q, &gamma);
                scatter(jac, row, &dyn_local(&local), &m.basis);
                jac.view_mut((row, ba_col), (3, 3)).copy_from(&(-w.accel.transpose()));
            }
            row += 3;
        }
    }
    for m in &geo.measurements {
        if let Some(y_m) = m.mag {
            let q = vec4(&(&d.coeffs * &m.basis));
            r.fixed_rows_mut::<3>(row)
                .copy_from(&residual_mag(&q, &y_m, &w.mag, &problem.model));
            if let Some(jac) = jac.as_mut() {
                let local = -w.mag.transpose() * conj_rotate_jacobian(&q, &m_n);
                scatter(jac, row, &dyn_local(&local), &m.basis);
            }
            row += 3;
        }
    }

    if let Some(pen) = penalty {
        let root = pen.mu.sqrt();
        for i in 0..layout.nodes {
            let f = &geo.node_basis[i];
            let q = vec4(&(&d.coeffs * f));
            r[row] = root * (q.norm_squared() - 1.0 - pen.lambda[i] / (2.0 * pen.mu));
            if let Some(jac) = jac.as_mut() {
                let local = DMatrix::from_row_slice(1, 4, (2.0 * root * q).as_slice());
                scatter(jac, row, &local, f);
            }
            row += 1;
        }
    }
    debug_assert_eq!(row, rows);
    Ok((r, jac))
}

/// Unit-norm constraint values `‖q(τᵢ)‖² - 1` at the nodes.
pub(crate) fn norm_constraints(problem: &WindowProblem, x: &DVector<f64>) -> DVector<f64> {
    let layout = problem.layout(&Parameterization::Quaternion);
    let (d, _, _) = layout.unpack(x);
    DVector::from_iterator(
        layout.nodes,
        problem
            .geometry
            .node_basis
            .iter()
            .map(|f| (&d.coeffs * f).norm_squared() - 1.0),
    )
}

/// Cost rows of a Rodrigues window relative to `q_ref`.
pub(crate) fn rod_residuals(
    problem: &WindowProblem,
    q_ref: &Quaternion,
    x: &DVector<f64>,
    want_jac: bool,
) -> Result<Evaluation> {
    let param = Parameterization::Rodrigues { q_ref: *q_ref };
    let layout = problem.layout(&param);
    let geo = &problem.geometry;
    let w = &problem.weights;
    let (h, b_a, b_g) = layout.unpack(x);
    let rows = layout.cost_rows();
    let mut r = DVector::zeros(rows);
    let mut jac = want_jac.then(|| DMatrix::zeros(rows, layout.params()));
    let (ba_col, bg_col) = (layout.accel_bias_offset(), layout.gyro_bias_offset());
    let qr = q_ref.to_vec4();
    let left_ref = quat_left_matrix(&qr);
    let w_ref = conj_rotate(&qr, &earth_rate_n(&problem.model));
    let gamma = gravity_n(&problem.model);
    let m_n = mag_field_n(&problem.model);
    let g_limit = 2.0 * ((1.0 / (RODRIGUES_SINGULARITY * RODRIGUES_SINGULARITY)) - 1.0).sqrt();
    let check = |g: &Vector3<f64>| -> Result<()> {
        if !(g.norm() < g_limit) {
            return Err(Error::SingularRotation {
                scalar: 2.0 / (4.0 + g.norm_squared()).sqrt(),
            });
        }
        Ok(())
    };

    // prior
    let g0 = vec3(&(&h.coeffs * &geo.start_basis));
    check(&g0)?;
    let q_start = left_ref * delta_quat(&g0);
    let wt = w.prior.transpose();
    r.fixed_rows_mut::<9>(0)
        .copy_from(&(wt * prior_error(&q_start, &b_a, &b_g, &problem.prior)));
    if let Some(jac) = jac.as_mut() {
        let q0c = conj4(&problem.prior.q0.to_vec4());
        let de_dg = 2.0 * rows123(&quat_right_matrix(&q0c)) * left_ref * delta_quat_jacobian(&g0);
        let local = wt.fixed_columns::<3>(0) * de_dg;
        scatter(jac, 0, &DMatrix::from_column_slice(9, 3, local.as_slice()), &geo.start_basis);
        jac.view_mut((0, ba_col), (9, 3)).copy_from(&wt.fixed_columns::<3>(3));
        jac.view_mut((0, bg_col), (9, 3)).copy_from(&wt.fixed_columns::<3>(6));
    }

    let mut row = 9;
    for i in 0..layout.nodes {
        let f = &geo.node_basis[i];
        let fd = &geo.node_basis_derivative[i];
        let g = vec3(&(&h.coeffs * f));
        check(&g)?;
        let g_dot = vec3(&(&h.coeffs * fd)) * geo.time_scale;
        let dq = delta_quat(&g);
        let scale = geo.node_scale[i];
        let wg = w.gyro.transpose() * scale;
        let pred = rodrigues_rate(&g, &g_dot) + conj_rotate(&dq, &w_ref) + b_g;
        r.fixed_rows_mut::<3>(row).copy_from(&(wg * (geo.node_gyro[i] - pred)));
        if let Some(jac) = jac.as_mut() {
            let n2 = 4.0 + g.norm_squared();
            let num = 4.0 * g_dot - 2.0 * g.cross(&g_dot);
            let dp_dg = 2.0 * skew(&g_dot) / n2 - num * (2.0 * g.transpose()) / (n2 * n2)
                + conj_rotate_jacobian(&dq, &w_ref) * delta_quat_jacobian(&g);
            let dp_dgdot = (4.0 * Matrix3::identity() - 2.0 * skew(&g)) / n2;
            scatter(jac, row, &dyn_local(&(-wg * dp_dg)), f);
            scatter(jac, row, &dyn_local(&(-wg * dp_dgdot * geo.time_scale)), fd);
            jac.view_mut((row, bg_col), (3, 3)).copy_from(&(-wg));
        }
        row += 3;
    }

    for m in &geo.measurements {
        if let Some(y_a) = m.accel {
            let g = vec3(&(&h.coeffs * &m.basis));
            check(&g)?;
            let q = left_ref * delta_quat(&g);
            r.fixed_rows_mut::<3>(row)
                .copy_from(&residual_accel(&q, &b_a, &y_a, &w.accel, &problem.model));
            if let Some(jac) = jac.as_mut() {
                let local = w.accel.transpose() * conj_rotate_jacobian(&q, &gamma) * left_ref * delta_quat_jacobian(&g);
                scatter(jac, row, &dyn_local(&local), &m.basis);
                jac.view_mut((row, ba_col), (3, 3)).copy_from(&(-w.accel.transpose()));
            }
            row += 3;
        }
    }
    for m in &geo.measurements {
        if let Some(y_m) = m.mag {
            let g = vec3(&(&h.coeffs * &m.basis));
            check(&g)?;
            let q = left_ref * delta_quat(&g);
            r.fixed_rows_mut::<3>(row)
                .copy_from(&residual_mag(&q, &y_m, &w.mag, &problem.model));
            if let Some(jac) = jac.as_mut() {
                let local = -w.mag.transpose() * conj_rotate_jacobian(&q, &m_n) * left_ref * delta_quat_jacobian(&g);
                scatter(jac, row, &dyn_local(&local), &m.basis);
            }
            row += 3;
        }
    }
    debug_assert_eq!(row, rows);
    Ok((r, jac))
}

/// Central-difference Jacobian of a residual function.
pub(crate) fn finite_difference_jacobian<F>(mut f: F, x: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let step = 1e-6 * x[j].abs().max(1e-2);
        xp[j] = x[j] + step;
        let rp = f(&xp)?;
        xp[j] = x[j] - step;
        let rm = f(&xp)?;
        xp[j] = x[j];
        jac.set_column(j, &((rp - rm) / (2.0 * step)));
    }
    Ok(jac)
}

/// Residuals and Jacobian for the configured derivative mode.
pub(crate) fn evaluate(
    problem: &WindowProblem,
    param: &Parameterization,
    x: &DVector<f64>,
    penalty: Option<&Penalty>,
    want_jac: bool,
) -> Result<Evaluation> {
    let analytic = problem.jacobian == JacobianMode::Analytic;
    let raw = |x: &DVector<f64>, jac: bool| match param {
        Parameterization::Quaternion => quat_residuals(problem, x, penalty, jac),
        Parameterization::Rodrigues { q_ref } => rod_residuals(problem, q_ref, x, jac),
    };
    if analytic || !want_jac {
        return raw(x, want_jac);
    }
    let (r, _) = raw(x, false)?;
    let jac = finite_difference_jacobian(|xx| raw(xx, false).map(|e| e.0), x, r.len())?;
    Ok((r, Some(jac)))
}

/// Window cost `J = J_x0 + J_v + J_z` (sum of squared weighted residuals).
pub fn objective(problem: &WindowProblem, param: &Parameterization, x: &DVector<f64>) -> Result<f64> {
    let (r, _) = evaluate(problem, param, x, None, false)?;
    Ok(r.norm_squared())
}
