//! Chebyshev basis, collocation points, Clenshaw-Curtis quadrature and
//! coefficient fitting on `[-1, 1]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inputs within this distance outside `[-1, 1]` are clamped.
pub const TAU_CLAMP: f64 = 1e-12;

/// Vector-valued Chebyshev series `Σ cᵢ Fᵢ(τ)`; column `i` holds `cᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevSeries {
    pub coeffs: DMatrix<f64>,
}

/// Quadrature nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ChebyshevSeries {
    pub fn new(coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.ncols() == 0 {
            return Err(Error::domain("series needs at least one coefficient"));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            coeffs: DMatrix::zeros(dim, order + 1),
        }
    }

    /// Builds a series from `vec(C)` (columns stacked).
    pub fn from_vec(dim: usize, order: usize, v: &[f64]) -> Self {
        Self {
            coeffs: DMatrix::from_column_slice(dim, order + 1, v),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.coeffs.as_slice().to_vec()
    }

    pub fn order(&self) -> usize {
        self.coeffs.ncols() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn eval(&self, tau: f64) -> Result<DVector<f64>> {
        series_eval(self, tau)
    }

    pub fn eval_derivative(&self, tau: f64) -> Result<DVector<f64>> {
        series_eval_derivative(self, tau)
    }
}

fn check_tau(tau: f64) -> Result<f64> {
    if !tau.is_finite() || tau.abs() > 1.0 + TAU_CLAMP {
        return Err(Error::domain(format!("tau {tau} outside [-1, 1]")));
    }
    Ok(tau.clamp(-1.0, 1.0))
}

/// `[F₀(τ), …, F_order(τ)]` by the three-term recurrence.
pub fn cheb_basis(tau: f64, order: usize) -> Result<DVector<f64>> {
    let tau = check_tau(tau)?;
    let mut f = DVector::zeros(order + 1);
    f[0] = 1.0;
    if order >= 1 {
        f[1] = tau;
    }
    for i in 1..order {
        f[i + 1] = 2.0 * tau * f[i] - f[i - 1];
    }
    Ok(f)
}

/// `[Ḟ₀(τ), …, Ḟ_order(τ)]`, derivatives with respect to `τ`.
pub fn cheb_basis_derivative(tau: f64, order: usize) -> Result<DVector<f64>> {
    let f = cheb_basis(tau, order)?;
    let tau = tau.clamp(-1.0, 1.0);
    let mut d = DVector::zeros(order + 1);
    if order >= 1 {
        d[1] = 1.0;
    }
    for i in 1..order {
        d[i + 1] = 2.0 * f[i] + 2.0 * tau * d[i] - d[i - 1];
    }
    Ok(d)
}

/// Chebyshev extrema `τᵢ = -cos(iπ/n)`, `i = 0..=n`, increasing.
pub fn cheb_points(n: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::domain("need at least two Chebyshev points"));
    }
    // sin form keeps the grid exactly antisymmetric
    Ok((0..=n)
        .map(|i| (PI * (2.0 * i as f64 - n as f64) / (2.0 * n as f64)).sin())
        .collect())
}

/// Clenshaw-Curtis rule on the `n + 1` points of [`cheb_points`].
///
/// Weights come from the closed-form cosine sum, which stays accurate for
/// several hundred points.
pub fn clenshaw_curtis_weights(n: usize) -> Result<QuadratureRule> {
    let points = cheb_points(n)?;
    let nf = n as f64;
    let half = n / 2;
    let weights = (0..=n)
        .map(|j| {
            let theta = j as f64 * PI / nf;
            let mut acc = 1.0;
            for k in 1..=half {
                let b = if 2 * k == n { 1.0 } else { 2.0 };
                let kf = k as f64;
                acc -= b / (4.0 * kf * kf - 1.0) * (2.0 * kf * theta).cos();
            }
            let c = if j == 0 || j == n { 1.0 } else { 2.0 };
            c * acc / nf
        })
        .collect();
    Ok(QuadratureRule { points, weights })
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Maps `t ∈ [t0, tm]` to `τ ∈ [-1, 1]`.
pub fn affine_time_map(t: f64, t0: f64, tm: f64) -> Result<f64> {
    if tm <= t0 {
        return Err(Error::domain(format!("empty interval [{t0}, {tm}]")));
    }
    Ok(2.0 * t / (tm - t0) - (tm + t0) / (tm - t0))
}

/// Inverse of [`affine_time_map`].
pub fn affine_time_unmap(tau: f64, t0: f64, tm: f64) -> Result<f64> {
    if tm <= t0 {
        return Err(Error::domain(format!("empty interval [{t0}, {tm}]")));
    }
    Ok(0.5 * ((tm - t0) * tau + tm + t0))
}

pub fn series_eval(series: &ChebyshevSeries, tau: f64) -> Result<DVector<f64>> {
    let f = cheb_basis(tau, series.order())?;
    Ok(&series.coeffs * f)
}

pub fn series_eval_derivative(series: &ChebyshevSeries, tau: f64) -> Result<DVector<f64>> {
    let fd = cheb_basis_derivative(tau, series.order())?;
    Ok(&series.coeffs * fd)
}

/// Default number of fit nodes for a series of the given order.
pub fn default_fit_terms(order: usize) -> usize {
    4 * (order + 1)
}

/// Discrete cosine fit of a vector function at `p_terms` Chebyshev-Gauss nodes.
///
/// `cᵢ = (2 - δ₀ᵢ)/P · Σₖ f(cos((k+½)π/P)) cos(iπ(k+½)/P)`.
pub fn cheb_fit<F>(mut f: F, order: usize, p_terms: usize) -> Result<ChebyshevSeries>
where
    F: FnMut(f64) -> Result<DVector<f64>>,
{
    if p_terms < order + 1 {
        return Err(Error::domain(format!(
            "{p_terms} fit nodes cannot determine order {order}"
        )));
    }
    let p = p_terms as f64;
    let mut coeffs: Option<DMatrix<f64>> = None;
    for k in 0..p_terms {
        let angle = (k as f64 + 0.5) * PI / p;
        let value = f(angle.cos())?;
        let c = coeffs.get_or_insert_with(|| DMatrix::zeros(value.len(), order + 1));
        if value.len() != c.nrows() {
            return Err(Error::domain("fitted function changed dimension"));
        }
        for i in 0..=order {
            let scale = (i as f64 * angle).cos();
            let mut col = c.column_mut(i);
            col.axpy(scale, &value, 1.0);
        }
    }
    let mut coeffs = coeffs.expect("p_terms >= 1");
    for i in 0..=order {
        let factor = if i == 0 { 1.0 / p } else { 2.0 / p };
        coeffs.column_mut(i).scale_mut(factor);
    }
    Ok(ChebyshevSeries { coeffs })
}
