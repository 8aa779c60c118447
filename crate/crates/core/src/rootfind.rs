//! Damped Newton and Levenberg–Marquardt solvers for square and
//! underdetermined residual systems with box bounds, plus a multi-start
//! driver.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{fd_jacobian_bounded, FdScheme, NumericsError};

/// Relative finite-difference step used for solver Jacobians.
pub const FD_STEP: f64 = 1e-6;

const LAMBDA0: f64 = 1e-3;
const LAMBDA_UP: f64 = 2.0;
const LAMBDA_DOWN: f64 = 1.0 / 3.0;
const LAMBDA_MAX: f64 = 1e16;
const SINGULAR_CONDITION: f64 = 1e12;
const ARMIJO_SLOPE: f64 = 1e-4;
const ARMIJO_CONTRACTION: f64 = 0.5;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum RootError {
    #[error("invalid root problem: {0}")]
    InvalidProblem(String),
    #[error("residual is not finite at the initial guess")]
    NonFiniteStart,
    #[error("Jacobian evaluation failed: {0}")]
    Jacobian(#[from] NumericsError),
}

/// Analytic Jacobian, used instead of finite differences when supplied.
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A residual system `residual(x) = 0` with `lower <= x <= upper`.
///
/// The residual must be reentrant: [`multi_start`] evaluates it from several
/// worker threads at once.
#[derive(Clone)]
pub struct RootProblem<F> {
    pub residual: F,
    pub jacobian: Option<JacobianFn>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub step_tol: f64,
}

impl<F> RootProblem<F>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    /// Unbounded problem with `residual_tol = 1e-9`, `step_tol = 1e-12` and
    /// `max_iters = 200`.
    pub fn new(residual: F, x0: Vec<f64>) -> Self {
        let n = x0.len();
        Self {
            residual,
            jacobian: None,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            x0,
            max_iters: 200,
            residual_tol: 1e-9,
            step_tol: 1e-12,
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn) -> Self {
        self.jacobian = Some(jacobian);
        self
    }

    pub fn with_residual_tol(mut self, tol: f64) -> Self {
        self.residual_tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    /// Same problem started from a different point.
    pub fn restarted(&self, x0: Vec<f64>) -> RootProblem<&F> {
        RootProblem {
            residual: &self.residual,
            jacobian: self.jacobian.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            x0,
            max_iters: self.max_iters,
            residual_tol: self.residual_tol,
            step_tol: self.step_tol,
        }
    }

    fn validate(&self) -> Result<(), RootError> {
        let n = self.x0.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(RootError::InvalidProblem(format!(
                "bounds have lengths {}/{} but x0 has {n}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for i in 0..n {
            if !(self.lower[i] <= self.x0[i] && self.x0[i] <= self.upper[i]) {
                return Err(RootError::InvalidProblem(format!(
                    "x0[{i}] = {} outside [{}, {}]",
                    self.x0[i], self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn jacobian(&self, x: &[f64], r: &[f64]) -> Result<DMatrix<f64>, RootError> {
        if let Some(jac) = &self.jacobian {
            return Ok(jac(x));
        }
        Ok(fd_jacobian_bounded(
            &self.residual,
            x,
            Some(r),
            &self.lower,
            &self.upper,
            FdScheme::Central,
            FD_STEP,
        )?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RootResult {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm after every accepted step, starting with the initial one.
    pub history: Vec<f64>,
    /// Point the solve started from.
    pub start: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Solves `(J^T J + mu I) d = -J^T r`, switching to the equivalent
/// `d = -J^T (J J^T + mu I)^{-1} r` when there are fewer residuals than
/// unknowns.
fn damped_step(jac: &DMatrix<f64>, r: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let (m, n) = jac.shape();
    if m < n {
        let mut a = jac * jac.transpose();
        for i in 0..m {
            a[(i, i)] += mu;
        }
        let y = a.cholesky()?.solve(r);
        Some(-(jac.transpose() * y))
    } else {
        let mut a = jac.transpose() * jac;
        for i in 0..n {
            a[(i, i)] += mu;
        }
        let g = jac.transpose() * r;
        Some(-a.cholesky()?.solve(&g))
    }
}

/// Levenberg–Marquardt with a central-difference Jacobian.
///
/// The damping starts at `1e-3` (relative to the largest diagonal entry of
/// `J^T J`), is multiplied by 2 on a rejected trial and by 1/3 on an accepted
/// one. Trial points are projected onto the bounds. Non-finite trial
/// residuals count as rejections.
pub fn solve_lm<F>(problem: &RootProblem<F>) -> Result<RootResult, RootError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    problem.validate()?;
    let mut x = problem.x0.clone();
    let mut r = (problem.residual)(&x);
    if !finite(&r) {
        return Err(RootError::NonFiniteStart);
    }
    let mut rn = norm(&r);
    let mut history = vec![rn];
    let mut lambda = LAMBDA0;
    let mut iterations = 0;
    let n = x.len();

    while iterations < problem.max_iters && rn > problem.residual_tol && n > 0 {
        iterations += 1;
        let jac = problem.jacobian(&x, &r)?;
        let rv = DVector::from_column_slice(&r);
        let scale = (0..n)
            .map(|j| jac.column(j).norm_squared())
            .fold(0.0, f64::max)
            .max(1e-300);

        let mut accepted = false;
        let mut stalled = false;
        while lambda < LAMBDA_MAX {
            let Some(step) = damped_step(&jac, &rv, lambda * scale) else {
                lambda *= LAMBDA_UP;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
            problem.project(&mut trial);
            let dp: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dp_norm = norm(&dp);
            if dp_norm <= problem.step_tol * (norm(&x) + problem.step_tol) {
                stalled = true;
                break;
            }
            let r_trial = (problem.residual)(&trial);
            if !finite(&r_trial) {
                lambda *= LAMBDA_UP;
                continue;
            }
            let lin = &rv + &jac * DVector::from_vec(dp);
            let predicted = rn * rn - lin.norm_squared();
            let rn_trial = norm(&r_trial);
            let actual = rn * rn - rn_trial * rn_trial;
            if actual > 0.0 && predicted > 0.0 && actual / predicted > 1e-4
                || actual > 0.0 && predicted <= 0.0
            {
                x = trial;
                r = r_trial;
                rn = rn_trial;
                history.push(rn);
                lambda = (lambda * LAMBDA_DOWN).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= LAMBDA_UP;
        }
        if !accepted || stalled {
            break;
        }
    }

    Ok(RootResult {
        converged: rn <= problem.residual_tol,
        x,
        residual_norm: rn,
        iterations,
        history,
        start: problem.x0.clone(),
    })
}

/// Newton's method with Armijo backtracking on `|r|^2 / 2`. A numerically
/// singular Jacobian (condition estimate above `1e12`) is replaced by a
/// Levenberg–Marquardt step.
pub fn solve_newton<F>(problem: &RootProblem<F>) -> Result<RootResult, RootError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    problem.validate()?;
    let mut x = problem.x0.clone();
    let mut r = (problem.residual)(&x);
    if !finite(&r) {
        return Err(RootError::NonFiniteStart);
    }
    if r.len() != x.len() {
        return Err(RootError::InvalidProblem(format!(
            "Newton needs a square system, got {} residuals for {} unknowns",
            r.len(),
            x.len()
        )));
    }
    let mut rn = norm(&r);
    let mut history = vec![rn];
    let mut iterations = 0;

    while iterations < problem.max_iters && rn > problem.residual_tol {
        iterations += 1;
        let jac = problem.jacobian(&x, &r)?;
        let rv = DVector::from_column_slice(&r);
        let sv = jac.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        let newton = if smin > 0.0 && smax / smin <= SINGULAR_CONDITION {
            jac.clone().lu().solve(&(-&rv))
        } else {
            None
        };
        let step = match newton {
            Some(s) => s,
            None => {
                let scale = (smax * smax).max(1e-300);
                match damped_step(&jac, &rv, LAMBDA0 * scale) {
                    Some(s) => s,
                    None => break,
                }
            }
        };
        let slope = rv.dot(&(&jac * &step));
        if slope >= 0.0 {
            break;
        }
        let phi = 0.5 * rn * rn;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-12 {
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            problem.project(&mut trial);
            let r_trial = (problem.residual)(&trial);
            if finite(&r_trial) {
                let rn_trial = norm(&r_trial);
                if 0.5 * rn_trial * rn_trial <= phi + ARMIJO_SLOPE * alpha * slope {
                    let dp = norm(&trial.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
                    x = trial;
                    r = r_trial;
                    rn = rn_trial;
                    history.push(rn);
                    accepted = dp > problem.step_tol * (norm(&x) + problem.step_tol);
                    break;
                }
            }
            alpha *= ARMIJO_CONTRACTION;
        }
        if !accepted {
            break;
        }
    }

    Ok(RootResult {
        converged: rn <= problem.residual_tol,
        x,
        residual_norm: rn,
        iterations,
        history,
        start: problem.x0.clone(),
    })
}

fn failed_start(start: Vec<f64>) -> RootResult {
    RootResult {
        x: start.clone(),
        residual_norm: f64::INFINITY,
        iterations: 0,
        converged: false,
        history: Vec::new(),
        start,
    }
}

/// Runs [`solve_lm`] from `n_starts` sampled points.
///
/// Results are sorted by residual norm, then by distance to the template's
/// `x0`, then by start index. Starts that fail outright appear as
/// non-converged results with an infinite residual norm. With
/// `stop_at_first`, only starts up to and including the first converged one
/// (in index order) are returned, regardless of how many workers ran.
pub fn multi_start<F, S>(
    problem_template: &RootProblem<F>,
    sampler: S,
    n_starts: usize,
    stop_at_first: bool,
) -> Vec<RootResult>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
    S: Fn(usize) -> Vec<f64> + Sync,
{
    let run = |i: usize| -> RootResult {
        let mut start = sampler(i);
        problem_template.project(&mut start);
        let p = problem_template.restarted(start.clone());
        solve_lm(&p).unwrap_or_else(|_| failed_start(start))
    };

    let mut results: Vec<(usize, RootResult)> = if stop_at_first {
        let batch = rayon::current_num_threads().max(1);
        let mut out = Vec::new();
        let mut next = 0;
        while next < n_starts {
            let end = (next + batch).min(n_starts);
            let chunk: Vec<(usize, RootResult)> =
                (next..end).into_par_iter().map(|i| (i, run(i))).collect();
            let first_ok = chunk.iter().position(|(_, r)| r.converged);
            match first_ok {
                Some(k) => {
                    out.extend(chunk.into_iter().take(k + 1));
                    break;
                }
                None => out.extend(chunk),
            }
            next = end;
        }
        out
    } else {
        (0..n_starts).into_par_iter().map(|i| (i, run(i))).collect()
    };

    let x0 = &problem_template.x0;
    let dist = |r: &RootResult| norm(&r.x.iter().zip(x0).map(|(a, b)| a - b).collect::<Vec<_>>());
    results.sort_by(|(ia, a), (ib, b)| {
        a.residual_norm
            .total_cmp(&b.residual_norm)
            .then(dist(a).total_cmp(&dist(b)))
            .then(ia.cmp(ib))
    });
    results.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lm_scalar_linear() {
        let p = RootProblem::new(|x: &[f64]| vec![x[0] - 3.0], vec![0.0]).with_residual_tol(1e-12);
        let r = solve_lm(&p).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-12);
        assert!(r.residual_norm <= 1e-12);
    }

    #[test]
    fn lm_rosenbrock() {
        let p = RootProblem::new(
            |x: &[f64]| vec![1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])],
            vec![-1.2, 1.0],
        )
        .with_residual_tol(1e-12);
        let r = solve_lm(&p).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lm_underdetermined_affine() {
        let p = RootProblem::new(|x: &[f64]| vec![x[0] + x[1] - 1.0], vec![0.0, 0.0]);
        let r = solve_lm(&p).unwrap();
        assert!((r.x[0] + r.x[1] - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn lm_respects_bounds() {
        // Unconstrained root at x = -2; the box forces the closest feasible point.
        let p = RootProblem::new(|x: &[f64]| vec![x[0] + 2.0, x[1] - 0.5], vec![1.0, 0.0])
            .with_bounds(vec![0.0, 0.0], vec![5.0, 5.0]);
        let r = solve_lm(&p).unwrap();
        assert!(!r.converged);
        assert!(r.x[0] >= 0.0 && r.x[0] < 1e-12);
        // |r|^2 = 4 + e^2 cannot resolve e much below sqrt(eps).
        assert!((r.x[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn lm_rejects_out_of_bounds_start() {
        let p = RootProblem::new(|x: &[f64]| vec![x[0]], vec![2.0]).with_bounds(vec![0.0], vec![1.0]);
        assert!(matches!(solve_lm(&p), Err(RootError::InvalidProblem(_))));
    }

    #[test]
    fn lm_max_iters_returns_best_iterate() {
        let p = RootProblem::new(
            |x: &[f64]| vec![1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])],
            vec![-1.2, 1.0],
        )
        .with_max_iters(2);
        let r = solve_lm(&p).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
        assert!(r.residual_norm <= r.history[0]);
    }

    #[test]
    fn newton_cube_root() {
        let p = RootProblem::new(|x: &[f64]| vec![x[0].powi(3) - 8.0], vec![3.0]).with_residual_tol(1e-13);
        let r = solve_newton(&p).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn newton_linear_one_step() {
        // [[3, 1], [1, 2]] x = [9, 8] -> x = (2, 3)
        let p = RootProblem::new(
            |x: &[f64]| vec![3.0 * x[0] + x[1] - 9.0, x[0] + 2.0 * x[1] - 8.0],
            vec![0.0, 0.0],
        )
        .with_jacobian(Arc::new(|_: &[f64]| DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0])))
        .with_residual_tol(1e-12);
        let r = solve_newton(&p).unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.x[0] - 2.0).abs() < 1e-12 * 2.0);
        assert!((r.x[1] - 3.0).abs() < 1e-12 * 3.0);
    }

    #[test]
    fn newton_singular_falls_back() {
        // Jacobian is singular at x0 = 0.
        // J = [[1, 1], [0, 0]] at the start.
        let p = RootProblem::new(
            |x: &[f64]| vec![x[0] + x[1] - 2.0, (x[0] - x[1]).powi(2)],
            vec![0.0, 0.0],
        );
        let r = solve_newton(&p).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] + r.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn newton_rejects_non_square() {
        let p = RootProblem::new(|x: &[f64]| vec![x[0] + x[1]], vec![0.0, 0.0]);
        assert!(matches!(solve_newton(&p), Err(RootError::InvalidProblem(_))));
    }

    #[test]
    fn multi_start_finds_both_roots() {
        let p = RootProblem::new(|x: &[f64]| vec![x[0] * x[0] - 1.0], vec![0.0])
            .with_bounds(vec![-3.0], vec![3.0]);
        let results = multi_start(&p, |i| vec![-3.0 + 6.0 * (i as f64 + 0.5) / 50.0], 50, false);
        assert_eq!(results.len(), 50);
        let conv: Vec<_> = results.iter().filter(|r| r.converged).collect();
        assert!(conv.iter().any(|r| (r.x[0] - 1.0).abs() < 1e-8));
        assert!(conv.iter().any(|r| (r.x[0] + 1.0).abs() < 1e-8));
        assert!(results.windows(2).all(|w| w[0].residual_norm <= w[1].residual_norm));
    }

    #[test]
    fn multi_start_single_equals_solve() {
        let f = |x: &[f64]| vec![1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])];
        let p = RootProblem::new(f, vec![-1.2, 1.0]);
        let single = solve_lm(&p).unwrap();
        let ms = multi_start(&p, |_| vec![-1.2, 1.0], 1, false);
        assert_eq!(ms, vec![single]);
    }

    #[test]
    fn multi_start_stop_at_first_is_worker_independent() {
        let p = RootProblem::new(|x: &[f64]| vec![x[0] * x[0] + 0.1 - x[1].sin()], vec![0.0, 0.0]);
        let sampler = |i: usize| vec![i as f64 * 0.37 - 2.0, i as f64 * 0.11];
        let a = multi_start(&p, sampler, 20, true);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| multi_start(&p, sampler, 20, true));
        assert_eq!(a, b);
        assert!(a.iter().filter(|r| r.converged).count() == 1);
    }

    #[test]
    fn converged_results_reevaluate_within_tolerance() {
        let f = |x: &[f64]| vec![x[0].sin() - 0.5, x[1] * x[0] - 1.0];
        let p = RootProblem::new(f, vec![0.4, 1.0]);
        let results = multi_start(&p, |i| vec![0.1 * i as f64, 1.0 + 0.2 * i as f64], 8, false);
        for r in results.iter().filter(|r| r.converged) {
            assert!(norm(&f(&r.x)) <= p.residual_tol);
        }
    }
}
