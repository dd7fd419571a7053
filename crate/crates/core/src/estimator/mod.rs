//! Sliding-window attitude and bias estimation by Chebyshev polynomial
//! optimization.
//!
//! Each window represents the attitude over `[t₀, t_M]` either directly as a
//! quaternion-valued Chebyshev series (constrained to unit norm at the
//! collocation points) or as a Rodrigues-vector series relative to a fixed
//! reference attitude. Windows are chained through their end state and a
//! covariance propagated along the estimate.

mod residuals;
mod sliding;
mod solver;
mod weights;
mod window;

use serde::{Deserialize, Serialize};

use crate::chebyshev::{affine_time_map, ChebyshevSeries};
use crate::error::{Error, Result};
use crate::rotmath::{rodrigues_to_quat, Quaternion, RodriguesVector};
use crate::sensors::{EarthModel, NoiseSpec};

pub use crate::track::{EstimateTrack, WindowPrior};
pub use residuals::{
    objective, residual_accel, residual_dynamics_quat, residual_dynamics_rod, residual_mag,
    residual_prior, ProblemLayout, WindowProblem,
};
pub use sliding::{run_sliding, run_sliding_detailed, window_bounds};
pub use solver::{levenberg_marquardt, LmConfig, LmOutcome};
pub use weights::{build_weights, WeightSet};
pub use window::{ImuWindow, WindowGeometry};

/// Attitude parameterization of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Quaternion coefficients with unit-norm constraints.
    Qua,
    /// Rodrigues-vector coefficients relative to a reference attitude.
    Rod,
}

/// How solver Jacobians are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Penalty schedule for the unit-norm constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlmConfig {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// The penalty grows unless the violation shrinks by this factor.
    pub required_reduction: f64,
    pub max_rounds: usize,
    /// Target for `max |‖q(τₖ)‖ - 1|`.
    pub tolerance: f64,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            required_reduction: 0.25,
            max_rounds: 20,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: Mode,
    /// Window length (s).
    pub window_size: f64,
    /// Chebyshev order of the attitude series.
    pub order: usize,
    /// Collocation points per window; `order + 1` when unset.
    pub quad_points: Option<usize>,
    /// Fit nodes for series conversions; `4 (order + 1)` when unset.
    pub fit_terms: Option<usize>,
    pub efh_degree: usize,
    pub efh_extension: usize,
    pub jacobian: JacobianMode,
    pub lm: LmConfig,
    pub alm: AlmConfig,
    pub noise: NoiseSpec,
    pub earth: EarthModel,
    /// A trailing partial window shorter than this fraction of a window is
    /// merged into its predecessor.
    pub merge_fraction: f64,
    /// Windows longer than this (s) are initialized from a short-window pass.
    pub short_window_limit: f64,
    /// Window length and order of that short-window pass.
    pub short_window: f64,
    pub short_order: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Qua,
            window_size: 0.1,
            order: 6,
            quad_points: None,
            fit_terms: None,
            efh_degree: crate::efh::DEFAULT_DEGREE,
            efh_extension: crate::efh::DEFAULT_EXTENSION,
            jacobian: JacobianMode::Analytic,
            lm: LmConfig::default(),
            alm: AlmConfig::default(),
            noise: NoiseSpec::default(),
            earth: EarthModel::default(),
            merge_fraction: 0.2,
            short_window_limit: 0.15,
            short_window: 0.1,
            short_order: 6,
        }
    }
}

impl EstimatorConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Window size and order together, as used by the window-size study.
    pub fn with_window(mut self, window_size: f64, order: usize) -> Self {
        self.window_size = window_size;
        self.order = order;
        self
    }

    pub fn quad_points(&self) -> usize {
        self.quad_points.unwrap_or(self.order + 1)
    }

    pub fn fit_terms(&self) -> usize {
        self.fit_terms
            .unwrap_or_else(|| crate::chebyshev::default_fit_terms(self.order))
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.window_size > 0.0) {
            problems.push("window size must be positive".to_string());
        }
        if self.order < 1 {
            problems.push("order must be at least 1".to_string());
        }
        if self.quad_points() < 2 {
            problems.push("need at least two collocation points".to_string());
        }
        if self.fit_terms() < self.order + 1 {
            problems.push("fit terms must exceed the order".to_string());
        }
        if !(self.alm.tolerance > 0.0) || !(self.alm.initial_penalty > 0.0) {
            problems.push("constraint tolerance and penalty must be positive".to_string());
        }
        if !(self.short_window > 0.0 && self.short_window <= self.short_window_limit) {
            problems.push("short window must be positive and within the short-window limit".to_string());
        }
        if let Err(e) = self.earth.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::domain(problems.join("; ")))
        }
    }
}

/// Window attitude parameterization together with its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Parameterization {
    Quaternion,
    Rodrigues { q_ref: Quaternion },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub outer_rounds: usize,
    pub gradient_norm: f64,
    pub constraint_violation: f64,
    pub converged: bool,
    pub init_rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub t_start: f64,
    pub t_end: f64,
    pub param: Parameterization,
    pub coeffs: ChebyshevSeries,
    pub accel_bias: nalgebra::Vector3<f64>,
    pub gyro_bias: nalgebra::Vector3<f64>,
    /// Prior, dynamics and measurement cost at the solution.
    pub objective: f64,
    pub diagnostics: SolverDiagnostics,
}

impl WindowSolution {
    pub fn tau(&self, t: f64) -> Result<f64> {
        affine_time_map(t, self.t_start, self.t_end)
    }

    /// Unnormalized quaternion of the series at `tau`.
    pub fn raw_attitude_at_tau(&self, tau: f64) -> Result<Quaternion> {
        let v = self.coeffs.eval(tau)?;
        Ok(match self.param {
            Parameterization::Quaternion => Quaternion::new(v[0], v[1], v[2], v[3]),
            Parameterization::Rodrigues { q_ref } => {
                q_ref * rodrigues_to_quat(&RodriguesVector(nalgebra::Vector3::new(v[0], v[1], v[2])))
            }
        })
    }

    /// Unit attitude at `tau`.
    pub fn attitude_at_tau(&self, tau: f64) -> Result<Quaternion> {
        Ok(self.raw_attitude_at_tau(tau)?.normalize())
    }

    pub fn attitude_at(&self, t: f64) -> Result<Quaternion> {
        self.attitude_at_tau(self.tau(t)?)
    }
}

/// Solves one window in the configured mode.
pub fn solve_window(
    window: &ImuWindow,
    prior: &WindowPrior,
    config: &EstimatorConfig,
) -> Result<WindowSolution> {
    match config.mode {
        Mode::Qua => solve_qua_window(window, prior, config),
        Mode::Rod => solve_rod_window(window, prior, config),
    }
}

/// Quaternion-mode window solve from the linear initializer.
pub fn solve_qua_window(
    window: &ImuWindow,
    prior: &WindowPrior,
    config: &EstimatorConfig,
) -> Result<WindowSolution> {
    let problem = WindowProblem::new(window, prior, config)?;
    let init = crate::init::linear_init(&problem)?;
    sliding::solve_qua_from(
        &problem,
        init.coeffs,
        prior.accel_bias,
        prior.gyro_bias,
        init.rank_deficient,
        config,
    )
}

/// Rodrigues-mode window solve from the linear initializer.
pub fn solve_rod_window(
    window: &ImuWindow,
    prior: &WindowPrior,
    config: &EstimatorConfig,
) -> Result<WindowSolution> {
    let problem = WindowProblem::new(window, prior, config)?;
    let init = crate::init::linear_init(&problem)?;
    sliding::solve_rod_from(
        &problem,
        &init.coeffs,
        prior.accel_bias,
        prior.gyro_bias,
        init.rank_deficient,
        config,
    )
}
