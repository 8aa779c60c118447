//! Initial-value integration: classical RK4, Dormand–Prince 5(4) with step
//! control, and a switching-aware variant for bang-bang right-hand sides.

use super::NumericsError;

/// Sign of a switching function, selecting one branch of a discontinuous
/// right-hand side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Positive,
    Negative,
}

impl Branch {
    /// Branch selected by the value of a switching function. Zero maps to
    /// `Positive`.
    pub fn of(value: f64) -> Self {
        if value < 0.0 {
            Branch::Negative
        } else {
            Branch::Positive
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Branch::Positive => 1.0,
            Branch::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Branch::Positive => Branch::Negative,
            Branch::Negative => Branch::Positive,
        }
    }
}

/// An initial-value problem `v' = rhs(s, v)` on `[t0, t1]`.
///
/// The right-hand side writes the derivative into its output slice. For
/// [`integrate_with_switching`] it additionally receives the active
/// [`Branch`].
#[derive(Clone, Debug)]
pub struct OdeProblem<F> {
    pub rhs: F,
    pub t0: f64,
    pub t1: f64,
    pub v0: Vec<f64>,
    pub max_step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl<F> OdeProblem<F> {
    /// Problem with unbounded step size and tolerances of `1e-10`.
    pub fn new(rhs: F, t0: f64, t1: f64, v0: Vec<f64>) -> Self {
        Self {
            rhs,
            t0,
            t1,
            v0,
            max_step: f64::INFINITY,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
        }
    }

    pub fn with_tolerances(mut self, abs_tol: f64, rel_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if !(self.t0.is_finite() && self.t1.is_finite()) || self.t1 < self.t0 {
            return Err(NumericsError::InvalidProblem(format!(
                "integration span [{}, {}] must be finite with t1 >= t0",
                self.t0, self.t1
            )));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(NumericsError::InvalidProblem(
                "tolerances must be strictly positive".into(),
            ));
        }
        if !(self.max_step > 0.0) {
            return Err(NumericsError::InvalidProblem(
                "max_step must be positive".into(),
            ));
        }
        if self.v0.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::InvalidProblem(
                "initial state is not finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegrationStatus {
    Converged,
    StepUnderflow,
    EventLimit,
}

/// Sampled solution of an [`OdeProblem`].
///
/// `times` is strictly increasing and starts at `t0`; when `status` is
/// `Converged` it ends at `t1` exactly.
#[derive(Clone, Debug)]
pub struct IntegrationResult {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub status: IntegrationStatus,
    /// Times at which the switching function changed sign, in order.
    pub switch_times: Vec<f64>,
}

impl IntegrationResult {
    fn start(t0: f64, v0: &[f64]) -> Self {
        Self {
            times: vec![t0],
            states: vec![v0.to_vec()],
            status: IntegrationStatus::Converged,
            switch_times: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, v: &[f64]) {
        self.times.push(t);
        self.states.push(v.to_vec());
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("integration result is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("integration result is never empty")
    }

    pub fn converged(&self) -> bool {
        self.status == IntegrationStatus::Converged
    }

    /// Linear interpolation between stored samples; clamps outside the span.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let k = self.times.partition_point(|&s| s <= t);
        let (ta, tb) = (self.times[k - 1], self.times[k]);
        let w = (t - ta) / (tb - ta);
        self.states[k - 1]
            .iter()
            .zip(&self.states[k])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Classical fourth-order Runge–Kutta with `n_steps` uniform steps.
pub fn integrate_rk4<F>(
    problem: &OdeProblem<F>,
    n_steps: usize,
) -> Result<IntegrationResult, NumericsError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    problem.validate()?;
    if n_steps == 0 {
        return Err(NumericsError::InvalidProblem("n_steps must be >= 1".into()));
    }
    let dim = problem.v0.len();
    let h = (problem.t1 - problem.t0) / n_steps as f64;
    let mut out = IntegrationResult::start(problem.t0, &problem.v0);
    if h == 0.0 {
        return Ok(out);
    }
    out.times.reserve(n_steps);
    out.states.reserve(n_steps);

    let mut v = problem.v0.clone();
    let (mut k1, mut k2, mut k3, mut k4) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    for i in 0..n_steps {
        let t = problem.t0 + i as f64 * h;
        rk4_step(&problem.rhs, t, &v, h, [&mut k1, &mut k2, &mut k3, &mut k4], &mut tmp);
        for j in 0..dim {
            v[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if !all_finite(&v) {
            return Err(NumericsError::NonFinite {
                t: t + h,
                last_t: out.final_time(),
                last_state: out.final_state().to_vec(),
            });
        }
        let t_next = if i + 1 == n_steps { problem.t1 } else { t + h };
        out.push(t_next, &v);
    }
    Ok(out)
}

fn rk4_step<F>(rhs: &F, t: f64, v: &[f64], h: f64, k: [&mut Vec<f64>; 4], tmp: &mut [f64])
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let [k1, k2, k3, k4] = k;
    let dim = v.len();
    rhs(t, v, k1);
    for j in 0..dim {
        tmp[j] = v[j] + 0.5 * h * k1[j];
    }
    rhs(t + 0.5 * h, tmp, k2);
    for j in 0..dim {
        tmp[j] = v[j] + 0.5 * h * k2[j];
    }
    rhs(t + 0.5 * h, tmp, k3);
    for j in 0..dim {
        tmp[j] = v[j] + h * k3[j];
    }
    rhs(t + h, tmp, k4);
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Stepper {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Stepper {
    fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            y_new: vec![0.0; dim],
        }
    }

    /// One Dormand–Prince step of size `h` from `(t, y)`, assuming `k[0]`
    /// already holds `rhs(t, y)`. Returns the scaled error estimate; the
    /// fifth-order solution is left in `y_new` and `k[6]` holds its slope.
    fn step<F>(&mut self, rhs: &F, t: f64, y: &[f64], h: f64, atol: f64, rtol: f64) -> f64
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let dim = y.len();
        for s in 1..7 {
            for j in 0..dim {
                let mut acc = 0.0;
                for (r, a) in A[s].iter().enumerate().take(s) {
                    acc += a * self.k[r][j];
                }
                self.tmp[j] = y[j] + h * acc;
            }
            let (_, tail) = self.k.split_at_mut(s);
            rhs(t + C[s] * h, &self.tmp, &mut tail[0]);
        }
        // k[6] was evaluated at the fifth-order solution (FSAL row).
        self.y_new.copy_from_slice(&self.tmp);
        let mut err: f64 = 0.0;
        for j in 0..dim {
            let mut e = 0.0;
            for s in 0..7 {
                e += (B5[s] - B4[s]) * self.k[s][j];
            }
            let scale = atol + rtol * y[j].abs().max(self.y_new[j].abs());
            err = err.max((h * e).abs() / scale);
        }
        if !all_finite(&self.y_new) || !all_finite(&self.k[6]) {
            return f64::NAN;
        }
        err
    }
}

fn initial_step<F>(rhs: &F, t0: f64, y0: &[f64], f0: &[f64], span: f64, atol: f64, rtol: f64, max_step: f64) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let scale: Vec<f64> = y0.iter().map(|y| atol + rtol * y.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        if dim == 0 {
            return 0.0;
        }
        (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / dim as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span).min(max_step);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; dim];
    rhs(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let h = (100.0 * h0).min(h1).min(span).min(max_step);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        span.min(max_step) * 1e-3
    }
}

/// Adaptive Dormand–Prince 5(4) integration. Each accepted step satisfies
/// `|local error_j| <= abs_tol + rel_tol * |v_j|` componentwise.
pub fn integrate_adaptive<F>(problem: &OdeProblem<F>) -> Result<IntegrationResult, NumericsError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let rhs = |t: f64, v: &[f64], _b: Branch, out: &mut [f64]| (problem.rhs)(t, v, out);
    adaptive_core(problem, &rhs, None::<&fn(&[f64]) -> f64>, usize::MAX)
}

/// Default cap on located switches in [`integrate_with_switching`].
pub const DEFAULT_MAX_SWITCHES: usize = 1000;

/// Adaptive integration of a right-hand side that is discontinuous across
/// zeros of `switch_fn`.
///
/// The branch is frozen over each step. When `switch_fn` changes sign inside
/// an accepted step, the crossing is located by bisection to within
/// `1e-12 * (t1 - t0)`, the state is restarted there, and the branch flips
/// to the post-crossing side.
pub fn integrate_with_switching<F, S>(
    problem: &OdeProblem<F>,
    switch_fn: S,
) -> Result<IntegrationResult, NumericsError>
where
    F: Fn(f64, &[f64], Branch, &mut [f64]),
    S: Fn(&[f64]) -> f64,
{
    adaptive_core(problem, &problem.rhs, Some(&switch_fn), DEFAULT_MAX_SWITCHES)
}

/// As [`integrate_with_switching`] with an explicit switch cap.
pub fn integrate_with_switching_limit<F, S>(
    problem: &OdeProblem<F>,
    switch_fn: S,
    max_switches: usize,
) -> Result<IntegrationResult, NumericsError>
where
    F: Fn(f64, &[f64], Branch, &mut [f64]),
    S: Fn(&[f64]) -> f64,
{
    adaptive_core(problem, &problem.rhs, Some(&switch_fn), max_switches)
}

fn initial_branch<R, S>(rhs: &R, t0: f64, v0: &[f64], switch_fn: &S) -> Branch
where
    R: Fn(f64, &[f64], Branch, &mut [f64]),
    S: Fn(&[f64]) -> f64,
{
    let s0 = switch_fn(v0);
    if s0 != 0.0 {
        return Branch::of(s0);
    }
    // Exactly on the switching surface: pick the branch whose flow leaves
    // the surface on its own side.
    let mut f = vec![0.0; v0.len()];
    for branch in [Branch::Positive, Branch::Negative] {
        rhs(t0, v0, branch, &mut f);
        let probe: Vec<f64> = v0.iter().zip(&f).map(|(v, d)| v + 1e-9 * d).collect();
        let s = switch_fn(&probe);
        if s != 0.0 && Branch::of(s) == branch {
            return branch;
        }
    }
    Branch::Positive
}

fn adaptive_core<P, R, S>(
    problem: &OdeProblem<P>,
    rhs_b: &R,
    switch_fn: Option<&S>,
    max_switches: usize,
) -> Result<IntegrationResult, NumericsError>
where
    R: Fn(f64, &[f64], Branch, &mut [f64]),
    S: Fn(&[f64]) -> f64,
{
    problem.validate()?;
    let (t0, t1) = (problem.t0, problem.t1);
    let span = t1 - t0;
    let mut out = IntegrationResult::start(t0, &problem.v0);
    if span == 0.0 {
        return Ok(out);
    }
    let dim = problem.v0.len();
    let (atol, rtol) = (problem.abs_tol, problem.rel_tol);
    let event_tol = 1e-12 * span;

    let mut branch = match switch_fn {
        Some(s) => initial_branch(rhs_b, t0, &problem.v0, s),
        None => Branch::Positive,
    };
    let mut st = Stepper::new(dim);
    let mut t = t0;
    let mut y = problem.v0.clone();
    {
        let rhs = |s: f64, v: &[f64], o: &mut [f64]| rhs_b(s, v, branch, o);
        rhs(t, &y, &mut st.k[0]);
    }
    let mut h = {
        let rhs = |s: f64, v: &[f64], o: &mut [f64]| rhs_b(s, v, branch, o);
        initial_step(&rhs, t, &y, &st.k[0], span, atol, rtol, problem.max_step)
    };
    let mut last_nonfinite = false;

    while t < t1 {
        let h_min = 16.0 * f64::EPSILON * t.abs().max(span).max(1.0);
        let remaining = t1 - t;
        let mut last = false;
        if h >= remaining || remaining - h <= h_min {
            h = remaining;
            last = true;
        }
        if h < h_min && !last {
            if last_nonfinite {
                return Err(NumericsError::NonFinite {
                    t,
                    last_t: out.final_time(),
                    last_state: out.final_state().to_vec(),
                });
            }
            out.status = IntegrationStatus::StepUnderflow;
            return Ok(out);
        }
        let rhs = |s: f64, v: &[f64], o: &mut [f64]| rhs_b(s, v, branch, o);
        let err = st.step(&rhs, t, &y, h, atol, rtol);
        if err.is_nan() {
            last_nonfinite = true;
            h *= 0.25;
            continue;
        }
        last_nonfinite = false;
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            continue;
        }

        // Accepted step. Check for a switching-surface crossing.
        if let Some(sf) = switch_fn {
            let s_new = sf(&st.y_new);
            if s_new != 0.0 && Branch::of(s_new) != branch {
                let (tc, yc) = locate_crossing(&rhs, sf, t, &y, h, branch, event_tol, atol, rtol, dim);
                if out.switch_times.len() >= max_switches {
                    out.status = IntegrationStatus::EventLimit;
                    return Ok(out);
                }
                t = tc;
                y = yc;
                out.push(t, &y);
                out.switch_times.push(t);
                let s_here = sf(&y);
                branch = if s_here == 0.0 { branch.flipped() } else { Branch::of(s_here) };
                let rhs2 = |s: f64, v: &[f64], o: &mut [f64]| rhs_b(s, v, branch, o);
                rhs2(t, &y, &mut st.k[0]);
                if t >= t1 {
                    break;
                }
                continue;
            }
        }

        t = if last { t1 } else { t + h };
        std::mem::swap(&mut y, &mut st.y_new);
        out.push(t, &y);
        let (first, rest) = st.k.split_at_mut(6);
        first[0].copy_from_slice(&rest[0]);
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(problem.max_step);
    }
    Ok(out)
}

/// Bisects the first sign change of `sf` inside a step of size `h` from
/// `(t, y)`. Returns the state just past the crossing.
#[allow(clippy::too_many_arguments)]
fn locate_crossing<F, S>(
    rhs: &F,
    sf: &S,
    t: f64,
    y: &[f64],
    h: f64,
    branch: Branch,
    event_tol: f64,
    atol: f64,
    rtol: f64,
    dim: usize,
) -> (f64, Vec<f64>)
where
    F: Fn(f64, &[f64], &mut [f64]),
    S: Fn(&[f64]) -> f64,
{
    let mut st = Stepper::new(dim);
    let mut advance = |theta: f64| -> Vec<f64> {
        rhs(t, y, &mut st.k[0]);
        st.step(rhs, t, y, theta, atol, rtol);
        st.y_new.clone()
    };
    let (mut lo, mut hi) = (0.0, h);
    let mut y_hi = advance(hi);
    for _ in 0..200 {
        if hi - lo <= event_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let y_mid = advance(mid);
        let s = sf(&y_mid);
        if s != 0.0 && Branch::of(s) != branch {
            hi = mid;
            y_hi = y_mid;
        } else if s == 0.0 {
            hi = mid;
            y_hi = y_mid;
            break;
        } else {
            lo = mid;
        }
    }
    (t + hi, y_hi)
}
