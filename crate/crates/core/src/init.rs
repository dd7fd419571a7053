//! Optimization-free initialization of a window's quaternion series.
//!
//! Noise-free measurements make the quaternion path satisfy linear equations
//! in its Chebyshev coefficients: `ρ q = 0` for the accelerometer and
//! magnetometer, `ρ_g q - 2 q̇ = 0` for the gyro. Stacking these with a pin on
//! the window's initial attitude gives a homogeneous least-squares problem
//! `min ‖A x‖` subject to `‖B x‖ = 1`, where `B x = q(τ₀)`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

use crate::chebyshev::{cheb_fit, ChebyshevSeries};
use crate::error::{Error, Result};
use crate::estimator::WindowProblem;
use crate::rotmath::{quat_left_matrix, quat_right_matrix, quat_to_rodrigues, Quaternion};
use crate::sensors::{earth_rate_n, gravity_n, mag_field_n, EarthModel, ImuSample};

/// Stacked homogeneous system `[A_init; A_g; A_a; A_m]` and the pin `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Row scaling applied when stacking the linear system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowWeighting {
    /// Every block enters with unit weight.
    Uniform,
    /// Blocks are scaled by their noise levels and the prior attitude
    /// information, as in the nonlinear cost.
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousSolution {
    pub x: DVector<f64>,
    /// `‖A x‖` at the solution.
    pub residual: f64,
    /// The minimizer is not unique.
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearInit {
    pub coeffs: ChebyshevSeries,
    pub rank_deficient: bool,
}

fn pure4(v: &Vector3<f64>) -> nalgebra::Vector4<f64> {
    nalgebra::Vector4::new(0.0, v.x, v.y, v.z)
}

/// `(ρ_a, ρ_m, ρ_g)` of one sample given bias estimates.
pub fn rho_matrices(
    sample: &ImuSample,
    accel_bias: &Vector3<f64>,
    gyro_bias: &Vector3<f64>,
    model: &EarthModel,
) -> (Matrix4<f64>, Matrix4<f64>, Matrix4<f64>) {
    let rho_a = quat_right_matrix(&pure4(&(sample.accel - accel_bias)))
        + quat_left_matrix(&pure4(&gravity_n(model)));
    let rho_m = quat_right_matrix(&pure4(&sample.mag)) - quat_left_matrix(&pure4(&mag_field_n(model)));
    let rho_g = gyro_rho(&sample.gyro, gyro_bias, model);
    (rho_a, rho_m, rho_g)
}

fn gyro_rho(y_g: &Vector3<f64>, gyro_bias: &Vector3<f64>, model: &EarthModel) -> Matrix4<f64> {
    quat_right_matrix(&pure4(&(y_g - gyro_bias))) - quat_left_matrix(&pure4(&earth_rate_n(model)))
}

/// Writes `Σⱼ basisⱼ · block` into `a[row.., 4j..4j+4]` (a Kronecker row).
fn kron_row(a: &mut DMatrix<f64>, row: usize, basis: &DVector<f64>, block: &DMatrix<f64>) {
    for (j, &f) in basis.iter().enumerate() {
        let mut view = a.view_mut((row, 4 * j), (block.nrows(), 4));
        view += block * f;
    }
}

fn dyn_block<const R: usize>(m: &nalgebra::SMatrix<f64, R, 4>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, 4, m.as_slice())
}

/// Square root of the mean diagonal information of a weight matrix.
fn scalar_weight(w: &Matrix3<f64>) -> f64 {
    ((w * w.transpose()).trace() / 3.0).sqrt()
}

pub fn build_linear_system(problem: &WindowProblem, weighting: RowWeighting) -> Result<LinearSystem> {
    let geo = &problem.geometry;
    if geo.nodes.is_empty() {
        return Err(Error::domain("no gyro collocation points"));
    }
    let model = &problem.model;
    let order = geo.order;
    let cols = 4 * (order + 1);
    let (p, s) = (geo.accel_count(), geo.mag_count());
    let rows = 3 + 4 * geo.nodes.len() + 4 * p + 4 * s;
    let mut a = DMatrix::zeros(rows, cols);
    let b_a = problem.prior.accel_bias;
    let b_g = problem.prior.gyro_bias;

    let (w_init, w_gyro, w_accel, w_mag) = match weighting {
        RowWeighting::Uniform => (Matrix3::identity(), 1.0, 1.0, 1.0),
        RowWeighting::Noise => {
            let p_att = problem.prior.cov.fixed_view::<3, 3>(0, 0).into_owned();
            let info = p_att
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("prior attitude covariance".into()))?
                .inverse();
            let w = info
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("prior attitude information".into()))?
                .l();
            (
                w.transpose(),
                scalar_weight(&problem.weights.gyro),
                scalar_weight(&problem.weights.accel),
                scalar_weight(&problem.weights.mag),
            )
        }
    };

    // pin of the initial attitude: 2 vec(q(τ₀) ∘ q₀*) = 0
    let q0c = problem.prior.q0.conj().to_vec4();
    let pin = (w_init * quat_right_matrix(&q0c).fixed_rows::<3>(1) * 2.0).into_owned();
    kron_row(&mut a, 0, &geo.start_basis, &dyn_block(&pin));

    let mut row = 3;
    for i in 0..geo.nodes.len() {
        let scale = w_gyro * geo.node_scale[i];
        let rho = gyro_rho(&geo.node_gyro[i], &b_g, model) * scale;
        kron_row(&mut a, row, &geo.node_basis[i], &dyn_block(&rho));
        let d = Matrix4::identity() * (-2.0 * geo.time_scale * scale);
        kron_row(&mut a, row, &geo.node_basis_derivative[i], &dyn_block(&d));
        row += 4;
    }
    let gamma = pure4(&gravity_n(model));
    let m_n = pure4(&mag_field_n(model));
    for m in &geo.measurements {
        if let Some(y) = m.accel {
            let rho = (quat_right_matrix(&pure4(&(y - b_a))) + quat_left_matrix(&gamma)) * w_accel;
            kron_row(&mut a, row, &m.basis, &dyn_block(&rho));
            row += 4;
        }
    }
    for m in &geo.measurements {
        if let Some(y) = m.mag {
            let rho = (quat_right_matrix(&pure4(&y)) - quat_left_matrix(&m_n)) * w_mag;
            kron_row(&mut a, row, &m.basis, &dyn_block(&rho));
            row += 4;
        }
    }
    debug_assert_eq!(row, rows);

    let mut b = DMatrix::zeros(4, cols);
    kron_row(&mut b, 0, &geo.start_basis, &DMatrix::identity(4, 4));
    Ok(LinearSystem { a, b })
}

/// Singular triplets sorted by decreasing singular value.
fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u = DMatrix::from_columns(&idx.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v = DMatrix::from_columns(&idx.iter().map(|&i| v.column(i)).collect::<Vec<_>>());
    let s = idx.iter().map(|&i| svd.singular_values[i]).collect();
    (u, s, v)
}

/// Orthonormal basis of the orthogonal complement of the columns of `v1`.
fn complement(v1: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v1.nrows();
    let k = v1.ncols();
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    let proj = DMatrix::identity(n, n) - v1 * v1.transpose();
    let (u, _, _) = sorted_svd(&proj);
    u.columns(0, n - k).into_owned()
}

type VectorMap = Box<dyn Fn(&DVector<f64>) -> DVector<f64>>;

/// Minimizes `‖A x‖` subject to `‖B x‖ = 1`.
///
/// With `B = U Σ V₁ᵀ` and `V₂` spanning the null space of `B`, write
/// `x = V₁ y₁ + V₂ y₂`. The optimal `y₂` is a least-squares function of `y₁`,
/// which leaves an ordinary smallest-singular-vector problem in `Σ y₁`.
pub fn solve_homogeneous(sys: &LinearSystem) -> Result<HomogeneousSolution> {
    let (a, b) = (&sys.a, &sys.b);
    if a.ncols() != b.ncols() {
        return Err(Error::domain("A and B have different column counts"));
    }
    if a.amax() == 0.0 {
        return Err(Error::domain("A is zero"));
    }
    let (_, sb, vb) = sorted_svd(b);
    let smax = sb.first().copied().unwrap_or(0.0);
    let k = sb.iter().filter(|&&s| s > 1e-12 * smax).count();
    if k == 0 {
        return Err(Error::domain("B is zero"));
    }
    let v1 = vb.columns(0, k).into_owned();
    let sigma = &sb[..k];
    let v2 = complement(&v1);
    let av1 = a * &v1;

    let mut rank_deficient = false;
    let (m, pinv_apply): (DMatrix<f64>, VectorMap) = if v2.ncols() == 0 {
        (av1.clone(), Box::new(|_: &DVector<f64>| DVector::zeros(0)))
    } else {
        let av2 = a * &v2;
        let (u2, s2, w2) = sorted_svd(&av2);
        let s2max = s2.first().copied().unwrap_or(0.0);
        let r = s2.iter().filter(|&&s| s > 1e-12 * s2max.max(1e-300)).count();
        if r < v2.ncols() {
            rank_deficient = true;
        }
        let ur = u2.columns(0, r).into_owned();
        let wr = w2.columns(0, r).into_owned();
        let inv: Vec<f64> = s2[..r].iter().map(|s| 1.0 / s).collect();
        let m = &av1 - &ur * (ur.transpose() * &av1);
        let apply = move |z: &DVector<f64>| {
            let mut t = ur.transpose() * z;
            for (ti, si) in t.iter_mut().zip(&inv) {
                *ti *= si;
            }
            &wr * t
        };
        (m, Box::new(apply))
    };

    let mut scaled = m.clone();
    for (j, s) in sigma.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let (_, sm, vm) = sorted_svd(&scaled);
    // pad to k singular values when `scaled` has fewer rows than columns
    let mut svals = sm.clone();
    svals.resize(k, 0.0);
    let z = if scaled.nrows() >= k {
        vm.column(k - 1).into_owned()
    } else {
        // the null space is nontrivial; any unit null vector minimizes
        rank_deficient = true;
        complement(&vm.columns(0, scaled.nrows()).into_owned()).column(0).into_owned()
    };
    if k >= 2 && svals[k - 2] - svals[k - 1] <= 1e-10 * svals[0].max(1e-300) {
        rank_deficient = true;
    }
    let y1 = DVector::from_iterator(k, z.iter().zip(sigma).map(|(zi, s)| zi / s));
    let mut x = &v1 * &y1;
    if v2.ncols() > 0 {
        let y2 = -pinv_apply(&(&av1 * &y1));
        x += &v2 * y2;
    }
    let bx = b * &x;
    if let Some(first) = bx.iter().find(|v| v.abs() > 1e-14) {
        if *first < 0.0 {
            x = -x;
        }
    }
    Ok(HomogeneousSolution {
        residual: (a * &x).norm(),
        x,
        rank_deficient,
    })
}

/// Linear estimate of the window's quaternion series.
pub fn linear_init(problem: &WindowProblem) -> Result<LinearInit> {
    let sys = build_linear_system(problem, RowWeighting::Noise)?;
    let sol = solve_homogeneous(&sys)?;
    Ok(LinearInit {
        coeffs: ChebyshevSeries::from_vec(4, problem.geometry.order, sol.x.as_slice()),
        rank_deficient: sol.rank_deficient,
    })
}

/// Rodrigues-vector series of `q_ref* ∘ q(τ)` for a quaternion series `d`.
pub fn rod_coeffs_from_quat(
    d: &ChebyshevSeries,
    q_ref: &Quaternion,
    order: usize,
    fit_terms: usize,
) -> Result<ChebyshevSeries> {
    if d.dim() != 4 {
        return Err(Error::domain("quaternion series must have 4 rows"));
    }
    let q_ref_conj = q_ref.conj();
    cheb_fit(
        |tau| {
            let v = d.eval(tau)?;
            let q = Quaternion::new(v[0], v[1], v[2], v[3]);
            if q.norm() == 0.0 {
                return Err(Error::domain("quaternion series vanishes"));
            }
            let g = quat_to_rodrigues(&(q_ref_conj * q.normalize()))?;
            Ok(DVector::from_column_slice(g.0.as_slice()))
        },
        order,
        fit_terms,
    )
}
