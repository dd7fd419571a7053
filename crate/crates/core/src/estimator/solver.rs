//! Levenberg-Marquardt least squares and the augmented-Lagrangian wrapper for
//! the unit-norm constraints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::residuals::{evaluate, norm_constraints, Penalty, WindowProblem};
use super::{AlmConfig, Parameterization};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop when `‖Jᵀr‖∞` falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step is this small relative to the iterate.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    /// `‖r‖²` at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Minimizes `‖r(x)‖²` from `x0`.
///
/// `f(x, want_jacobian)` returns the residual vector and, on request, its
/// Jacobian. The damped normal equations are scaled by the running maximum of
/// the Jacobian column norms (Marquardt scaling) and solved by Cholesky.
pub fn levenberg_marquardt<F>(mut f: F, x0: DVector<f64>, cfg: &LmConfig) -> Result<LmOutcome>
where
    F: FnMut(&DVector<f64>, bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)>,
{
    let mut x = x0;
    let (mut r, jac) = f(&x, true)?;
    let mut jac = jac.expect("jacobian requested");
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut scale = DVector::<f64>::zeros(x.len());
    let mut damping = cfg.initial_damping;
    let mut growth = 2.0;
    let mut iterations = 0;
    let mut converged = false;

    let mut jtj = jac.tr_mul(&jac);
    let mut grad = jac.tr_mul(&r);
    while iterations < cfg.max_iterations {
        if grad.amax() <= cfg.gradient_tolerance {
            converged = true;
            break;
        }
        for i in 0..x.len() {
            scale[i] = scale[i].max(jtj[(i, i)]).max(1e-300);
        }
        iterations += 1;

        let mut a = jtj.clone();
        for i in 0..x.len() {
            a[(i, i)] += damping * scale[i];
        }
        let step = match a.cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => {
                damping *= growth;
                growth *= 2.0;
                continue;
            }
        };
        let x_new = &x + &step;
        let trial = f(&x_new, false);
        let (r_new, _) = match trial {
            Ok(v) => v,
            Err(crate::error::Error::SingularRotation { .. }) if iterations < cfg.max_iterations => {
                // treat an iterate that leaves the chart as a rejected step
                damping *= growth;
                growth *= 2.0;
                continue;
            }
            Err(e) => return Err(e),
        };
        let cost_new = r_new.norm_squared();
        let scaled_step: f64 = step.iter().zip(scale.iter()).map(|(s, d)| d * s * s).sum();
        let predicted = -grad.dot(&step) + damping * scaled_step;
        let actual = cost - cost_new;
        if cost_new.is_finite() && actual > 0.0 && predicted > 0.0 {
            let rho = actual / predicted;
            x = x_new;
            r = r_new;
            cost = cost_new;
            history.push(cost);
            damping *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
            growth = 2.0;
            let (_, j) = f(&x, true)?;
            jac = j.expect("jacobian requested");
            jtj = jac.tr_mul(&jac);
            grad = jac.tr_mul(&r);
            if step.norm() <= cfg.step_tolerance * (x.norm() + cfg.step_tolerance)
                || actual <= 1e-15 * cost
            {
                converged = true;
                break;
            }
        } else {
            if step.norm() <= cfg.step_tolerance * (x.norm() + cfg.step_tolerance) {
                // no representable improvement left
                converged = true;
                break;
            }
            damping *= growth;
            growth *= 2.0;
        }
    }
    if !converged && grad.amax() <= cfg.gradient_tolerance {
        converged = true;
    }
    Ok(LmOutcome {
        gradient_norm: grad.norm(),
        x,
        cost,
        iterations,
        converged,
        cost_history: history,
    })
}

/// Result of the constrained quaternion solve.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConstrainedOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub rounds: usize,
    pub gradient_norm: f64,
    pub violation: f64,
    pub converged: bool,
}

/// `max |‖q(τᵢ)‖ - 1|` over the nodes.
pub(crate) fn norm_violation(problem: &WindowProblem, x: &DVector<f64>) -> f64 {
    norm_constraints(problem, x)
        .iter()
        .map(|c| ((1.0 + c).max(0.0).sqrt() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Augmented-Lagrangian loop around the quaternion-mode least squares.
pub(crate) fn solve_constrained(
    problem: &WindowProblem,
    x0: DVector<f64>,
    lm: &LmConfig,
    alm: &AlmConfig,
) -> Result<ConstrainedOutcome> {
    let param = Parameterization::Quaternion;
    let nodes = problem.geometry.nodes.len();
    let mut penalty = Penalty {
        mu: alm.initial_penalty,
        lambda: DVector::zeros(nodes),
    };
    let mut x = x0;
    let mut previous = norm_violation(problem, &x);
    let mut iterations = 0;
    let mut rounds = 0;
    let mut inner_ok = true;
    let mut gradient_norm = f64::NAN;
    let mut violation = previous;
    while rounds < alm.max_rounds {
        rounds += 1;
        let pen = penalty.clone();
        let out = levenberg_marquardt(|xx, j| evaluate(problem, &param, xx, Some(&pen), j), x, lm)?;
        iterations += out.iterations;
        inner_ok = out.converged;
        gradient_norm = out.gradient_norm;
        x = out.x;
        violation = norm_violation(problem, &x);
        if violation <= alm.tolerance {
            break;
        }
        let c = norm_constraints(problem, &x);
        penalty.lambda -= 2.0 * penalty.mu * c;
        if violation > alm.required_reduction * previous {
            penalty.mu *= alm.penalty_growth;
        }
        previous = violation;
    }
    Ok(ConstrainedOutcome {
        x,
        iterations,
        rounds,
        gradient_norm,
        violation,
        converged: inner_ok && violation <= alm.tolerance,
    })
}
