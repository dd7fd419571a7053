//! Window solves and the sliding-window driver.

use nalgebra::{DVector, Vector3};

use super::residuals::{evaluate, objective, WindowProblem};
use super::solver::{levenberg_marquardt, solve_constrained};
use super::window::ImuWindow;
use super::{solve_window, EstimatorConfig, Parameterization, SolverDiagnostics, WindowSolution};
use crate::chebyshev::{cheb_fit, ChebyshevSeries};
use crate::error::{Error, Result};
use crate::init::rod_coeffs_from_quat;
use crate::mekf::covariance_along_estimate;
use crate::rotmath::Quaternion;
use crate::sensors::ImuSample;
use crate::track::{EstimateState, EstimateTrack, WindowDiagnostics, WindowPrior};

/// Quaternion-mode solve from initial coefficients and biases.
pub(crate) fn solve_qua_from(
    problem: &WindowProblem,
    coeffs: ChebyshevSeries,
    accel_bias: Vector3<f64>,
    gyro_bias: Vector3<f64>,
    rank_deficient: bool,
    config: &EstimatorConfig,
) -> Result<WindowSolution> {
    let param = Parameterization::Quaternion;
    let layout = problem.layout(&param);
    let x0 = layout.pack(&coeffs, &accel_bias, &gyro_bias);
    let out = solve_constrained(problem, x0, &config.lm, &config.alm)?;
    let cost = objective(problem, &param, &out.x)?;
    let (coeffs, b_a, b_g) = layout.unpack(&out.x);
    Ok(WindowSolution {
        t_start: problem.geometry.t_start,
        t_end: problem.geometry.t_end,
        param,
        coeffs,
        accel_bias: b_a,
        gyro_bias: b_g,
        objective: cost,
        diagnostics: SolverDiagnostics {
            iterations: out.iterations,
            outer_rounds: out.rounds,
            gradient_norm: out.gradient_norm,
            constraint_violation: out.violation,
            converged: out.converged,
            init_rank_deficient: rank_deficient,
        },
    })
}

/// Rodrigues-mode solve; the reference attitude is the initial series'
/// attitude at the window start.
pub(crate) fn solve_rod_from(
    problem: &WindowProblem,
    quat_coeffs: &ChebyshevSeries,
    accel_bias: Vector3<f64>,
    gyro_bias: Vector3<f64>,
    rank_deficient: bool,
    config: &EstimatorConfig,
) -> Result<WindowSolution> {
    let v = quat_coeffs.eval(-1.0)?;
    let start = Quaternion::new(v[0], v[1], v[2], v[3]);
    if start.norm() == 0.0 {
        return Err(Error::domain("initial series vanishes at the window start"));
    }
    let q_ref = start.normalize();
    let param = Parameterization::Rodrigues { q_ref };
    let layout = problem.layout(&param);
    let h = rod_coeffs_from_quat(quat_coeffs, &q_ref, problem.geometry.order, config.fit_terms())?;
    let x0 = layout.pack(&h, &accel_bias, &gyro_bias);
    let out = levenberg_marquardt(|x, j| evaluate(problem, &param, x, None, j), x0, &config.lm)?;
    let (coeffs, b_a, b_g) = layout.unpack(&out.x);
    Ok(WindowSolution {
        t_start: problem.geometry.t_start,
        t_end: problem.geometry.t_end,
        param,
        coeffs,
        accel_bias: b_a,
        gyro_bias: b_g,
        objective: out.cost,
        diagnostics: SolverDiagnostics {
            iterations: out.iterations,
            outer_rounds: 1,
            gradient_norm: out.gradient_norm,
            constraint_violation: 0.0,
            converged: out.converged,
            init_rank_deficient: rank_deficient,
        },
    })
}

/// Inclusive sample-index ranges of consecutive windows sharing end samples.
///
/// A trailing remainder shorter than `merge_fraction` of a window joins the
/// last full window; a longer one becomes a short window of its own.
pub fn window_bounds(times: &[f64], window_size: f64, merge_fraction: f64) -> Result<Vec<(usize, usize)>> {
    let n = times.len();
    if n < 2 {
        return Err(Error::domain("need at least two samples"));
    }
    if !(window_size > 0.0) {
        return Err(Error::domain("window size must be positive"));
    }
    let period = (times[n - 1] - times[0]) / (n - 1) as f64;
    let step = (window_size / period).round() as usize;
    if step < 1 {
        return Err(Error::domain("window shorter than one sample period"));
    }
    let mut bounds = Vec::new();
    let mut start = 0;
    while start + step < n {
        bounds.push((start, start + step));
        start += step;
    }
    let rest = n - 1 - start;
    if rest > 0 {
        match bounds.last_mut() {
            Some(last) if (rest as f64) < merge_fraction * step as f64 => last.1 = n - 1,
            _ => bounds.push((start, n - 1)),
        }
    }
    Ok(bounds)
}

/// Attitude of each solution at a shared sample time, sign-aligned across
/// windows so the resulting path is continuous.
fn aligned_signs(solutions: &[WindowSolution]) -> Result<Vec<f64>> {
    let mut signs = Vec::with_capacity(solutions.len());
    let mut prev_end: Option<Quaternion> = None;
    for sol in solutions {
        let start = sol.attitude_at_tau(-1.0)?;
        let sign = match prev_end {
            Some(p) if p.dot(&start) < 0.0 => -1.0,
            _ => 1.0,
        };
        let end = sol.attitude_at_tau(1.0)?;
        prev_end = Some(if sign < 0.0 { -end } else { end });
        signs.push(sign);
    }
    Ok(signs)
}

/// Quaternion series over a long window fitted to a short-window pass.
fn long_window_init(
    window: &ImuWindow,
    prior: &WindowPrior,
    config: &EstimatorConfig,
) -> Result<(ChebyshevSeries, Vector3<f64>, Vector3<f64>)> {
    let short = EstimatorConfig {
        window_size: config.short_window,
        order: config.short_order,
        quad_points: None,
        fit_terms: None,
        ..*config
    };
    let (_, subs) = run_sliding_detailed(&window.samples, prior, &short)?;
    let signs = aligned_signs(&subs)?;
    let (t0, tm) = (window.t_start(), window.t_end());
    let fit = cheb_fit(
        |tau| {
            let t = 0.5 * ((tm - t0) * tau + tm + t0);
            let k = subs
                .iter()
                .position(|s| t <= s.t_end)
                .unwrap_or(subs.len() - 1);
            let q = subs[k].attitude_at(t.clamp(subs[k].t_start, subs[k].t_end))?;
            let q = if signs[k] < 0.0 { -q } else { q };
            Ok(DVector::from_column_slice(q.to_vec4().as_slice()))
        },
        config.order,
        config.fit_terms(),
    )?;
    let last = subs.last().expect("at least one window");
    Ok((fit, last.accel_bias, last.gyro_bias))
}

fn solve_sliding_window(
    window: &ImuWindow,
    prior: &WindowPrior,
    config: &EstimatorConfig,
) -> Result<WindowSolution> {
    if window.t_end() - window.t_start() <= config.short_window_limit {
        return solve_window(window, prior, config);
    }
    let problem = WindowProblem::new(window, prior, config)?;
    let (coeffs, b_a, b_g) = long_window_init(window, prior, config)?;
    match config.mode {
        super::Mode::Qua => solve_qua_from(&problem, coeffs, b_a, b_g, false, config),
        super::Mode::Rod => solve_rod_from(&problem, &coeffs, b_a, b_g, false, config),
    }
}

/// Runs the estimator over a whole record.
pub fn run_sliding(samples: &[ImuSample], prior: &WindowPrior, config: &EstimatorConfig) -> Result<EstimateTrack> {
    run_sliding_detailed(samples, prior, config).map(|(track, _)| track)
}

/// Like [`run_sliding`], also returning every window's solution.
pub fn run_sliding_detailed(
    samples: &[ImuSample],
    prior: &WindowPrior,
    config: &EstimatorConfig,
) -> Result<(EstimateTrack, Vec<WindowSolution>)> {
    config.validate()?;
    prior.validate()?;
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let bounds = window_bounds(&times, config.window_size, config.merge_fraction)?;
    let mut track = EstimateTrack::default();
    let mut solutions = Vec::with_capacity(bounds.len());
    let mut prior = *prior;
    let mut before: Option<(Quaternion, f64)> = None;
    let mut previous_q: Option<Quaternion> = None;

    for (index, &(a, b)) in bounds.iter().enumerate() {
        let first = usize::from(index > 0);
        let step = || -> Result<(WindowSolution, Vec<EstimateState>)> {
            let window = ImuWindow::new(samples[a..=b].to_vec(), first)?;
            let sol = solve_sliding_window(&window, &prior, config)?;
            let owned = &samples[a + first..=b];
            let mut attitudes = Vec::with_capacity(owned.len());
            for s in owned {
                attitudes.push(sol.attitude_at(s.t)?);
            }
            let covs = covariance_along_estimate(
                owned,
                &attitudes,
                &prior.cov,
                before.as_ref().map(|(q, t)| (q, *t)),
                &config.noise,
                &config.earth,
            )?;
            let states = owned
                .iter()
                .zip(attitudes)
                .zip(covs)
                .map(|((s, q), cov)| EstimateState {
                    t: s.t,
                    q,
                    accel_bias: sol.accel_bias,
                    gyro_bias: sol.gyro_bias,
                    cov,
                })
                .collect();
            Ok((sol, states))
        };
        let (sol, mut states) = step().map_err(|e| e.in_window(index))?;

        for st in &mut states {
            if let Some(p) = previous_q {
                if p.dot(&st.q) < 0.0 {
                    st.q = -st.q;
                }
            }
            previous_q = Some(st.q);
        }
        let end = states.last().expect("windows own at least one sample");
        before = Some((end.q, end.t));
        prior = WindowPrior {
            q0: end.q.canonical(),
            accel_bias: sol.accel_bias,
            gyro_bias: sol.gyro_bias,
            cov: end.cov,
        };
        track.windows.push(WindowDiagnostics {
            index,
            t_start: sol.t_start,
            t_end: sol.t_end,
            converged: sol.diagnostics.converged,
            iterations: sol.diagnostics.iterations,
            objective: sol.objective,
            gradient_norm: sol.diagnostics.gradient_norm,
            constraint_violation: sol.diagnostics.constraint_violation,
        });
        track.states.extend(states);
        solutions.push(sol);
    }
    Ok((track, solutions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64 * 0.01).collect()
    }

    #[test]
    fn bounds_share_end_samples() {
        let b = window_bounds(&times(2001), 0.1, 0.2).unwrap();
        assert_eq!(b.len(), 200);
        assert_eq!(b[0], (0, 10));
        assert_eq!(b[1], (10, 20));
        assert_eq!(b[199], (1990, 2000));
    }

    #[test]
    fn short_remainder_merges() {
        let b = window_bounds(&times(2002), 0.1, 0.2).unwrap();
        assert_eq!(b.len(), 200);
        assert_eq!(b[199], (1990, 2001));
        let b = window_bounds(&times(2004), 0.1, 0.2).unwrap();
        assert_eq!(b.len(), 201);
        assert_eq!(b[200], (2000, 2003));
        // record shorter than one window
        let b = window_bounds(&times(5), 0.1, 0.2).unwrap();
        assert_eq!(b, vec![(0, 4)]);
    }

    #[test]
    fn bounds_reject_bad_input() {
        assert!(window_bounds(&times(1), 0.1, 0.2).is_err());
        assert!(window_bounds(&times(10), 0.0, 0.2).is_err());
        assert!(window_bounds(&times(10), 0.001, 0.2).is_err());
    }
}
