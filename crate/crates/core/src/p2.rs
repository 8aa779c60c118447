//! Two-sided extremal shooting: steer from `chi_i` to `chi_f` in time `T` by
//! joining a forward extremal from `chi_i` with a backward extremal from
//! `chi_f` at an unknown fraction `tau` of the horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{
    integrate_adaptive, integrate_with_switching, Branch, IntegrationResult, NumericsError,
    OdeProblem,
};
use crate::rootfind::{solve_lm, RootProblem, RootResult};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum P2Error {
    #[error("invalid P2 problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Dynamics `f(x, u)`, its costate flow and the Hamiltonian maximizer
/// `u*(x, p) = argmax_u p^T f(x, u)`.
pub trait ExtremalField: Send + Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// `dx = f(x, u)`.
    fn dynamics(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// `dp = -grad_x f(x, u)^T p`.
    fn costate_dynamics(&self, x: &[f64], u: &[f64], p: &[f64], dp: &mut [f64]);

    /// Writes the Hamiltonian maximizer into `u`.
    fn maximizer(&self, x: &[f64], p: &[f64], u: &mut [f64]);

    /// Switching function for bang-bang maximizers. When present, the
    /// maximizer depends on `(x, p)` only through its sign.
    fn switch_value(&self, _x: &[f64], _p: &[f64]) -> Option<f64> {
        None
    }

    /// Maximizer on the given side of the switching surface.
    fn branch_control(&self, x: &[f64], p: &[f64], _branch: Branch, u: &mut [f64]) {
        self.maximizer(x, p, u);
    }

    /// Deterministic sample of the control set, used for verification.
    fn control_samples(&self) -> Vec<Vec<f64>>;

    /// `p^T f(x, u)`.
    fn hamiltonian(&self, x: &[f64], p: &[f64], u: &[f64]) -> f64 {
        let mut dx = vec![0.0; self.state_dim()];
        self.dynamics(x, u, &mut dx);
        p.iter().zip(&dx).map(|(a, b)| a * b).sum()
    }
}

/// Propagation direction of an extremal arc.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `x' = f`, `p' = -grad f^T p`, `u = u*(x, p)`.
    Forward,
    /// `x' = -f`, `p' = grad f^T p`, `u = u*(x, -p)`.
    Backward,
}

/// Integrates an extremal of duration `duration >= 0` from `(x0, p0)`.
/// The packed state is `[x, p]`.
pub fn propagate_extremal<E: ExtremalField + ?Sized>(
    field: &E,
    x0: &[f64],
    p0: &[f64],
    duration: f64,
    direction: Direction,
    tol: f64,
    max_step: f64,
) -> Result<IntegrationResult, NumericsError> {
    let n = field.state_dim();
    let m = field.control_dim();
    let mut v0 = x0.to_vec();
    v0.extend_from_slice(p0);
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let rhs = move |_t: f64, v: &[f64], branch: Branch, out: &mut [f64]| {
        let (x, p) = v.split_at(n);
        let q: Vec<f64> = p.iter().map(|c| sign * c).collect();
        let mut u = vec![0.0; m];
        field.branch_control(x, &q, branch, &mut u);
        let (dx, dp) = out.split_at_mut(n);
        field.dynamics(x, &u, dx);
        field.costate_dynamics(x, &u, &q, dp);
        for d in dx.iter_mut() {
            *d *= sign;
        }
    };
    let problem = OdeProblem::new(rhs, 0.0, duration, v0)
        .with_tolerances(tol, tol)
        .with_max_step(max_step);
    let probe_x = &x0[..n];
    let probe_p: Vec<f64> = p0.iter().map(|c| sign * c).collect();
    if field.switch_value(probe_x, &probe_p).is_some() {
        integrate_with_switching(&problem, |v: &[f64]| {
            let (x, p) = v.split_at(n);
            let q: Vec<f64> = p.iter().map(|c| sign * c).collect();
            field.switch_value(x, &q).unwrap_or(1.0)
        })
    } else {
        let smooth = OdeProblem::new(
            |t: f64, v: &[f64], out: &mut [f64]| (problem.rhs)(t, v, Branch::Positive, out),
            0.0,
            duration,
            problem.v0.clone(),
        )
        .with_tolerances(tol, tol)
        .with_max_step(max_step);
        integrate_adaptive(&smooth)
    }
}

/// Steering problem: reach `chi_f_spec` (with `None` marking free
/// components) from `chi_i` in time `t_final`.
#[derive(Clone, Debug)]
pub struct P2Problem<E> {
    pub field: E,
    pub chi_i: Vec<f64>,
    pub chi_f_spec: Vec<Option<f64>>,
    pub t_final: f64,
}

impl<E: ExtremalField> P2Problem<E> {
    pub fn new(
        field: E,
        chi_i: Vec<f64>,
        chi_f_spec: Vec<Option<f64>>,
        t_final: f64,
    ) -> Result<Self, P2Error> {
        let n = field.state_dim();
        if n < 2 {
            return Err(P2Error::InvalidProblem(
                "state dimension must be at least 2 for the costate sphere".into(),
            ));
        }
        if chi_i.len() != n || chi_f_spec.len() != n {
            return Err(P2Error::InvalidProblem(format!(
                "boundary states must have dimension {n}"
            )));
        }
        if chi_f_spec.iter().all(Option::is_none) {
            return Err(P2Error::InvalidProblem(
                "at least one terminal component must be fixed".into(),
            ));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(P2Error::InvalidProblem(format!(
                "final time must be positive and finite, got {t_final}"
            )));
        }
        if chi_i.iter().chain(chi_f_spec.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(P2Error::InvalidProblem("boundary values must be finite".into()));
        }
        Ok(Self {
            field,
            chi_i,
            chi_f_spec,
            t_final,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    pub fn n_free(&self) -> usize {
        self.chi_f_spec.iter().filter(|c| c.is_none()).count()
    }

    /// Length of the shooting vector `z`.
    pub fn n_unknowns(&self) -> usize {
        2 * (self.state_dim() - 1) + 1 + self.n_free()
    }

    /// Terminal state with free components filled from `freed`.
    pub fn terminal_state(&self, freed: &[f64]) -> Vec<f64> {
        let mut it = freed.iter();
        self.chi_f_spec
            .iter()
            .map(|c| c.unwrap_or_else(|| *it.next().expect("one freed value per free component")))
            .collect()
    }
}

/// Decoded shooting vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingUnknowns {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub tau: f64,
    pub freed: Vec<f64>,
}

/// Unit vector from hyperspherical angles (`n - 1` angles for `R^n`).
pub fn sphere_point(angles: &[f64]) -> Vec<f64> {
    let n = angles.len() + 1;
    let mut out = vec![0.0; n];
    let mut s = 1.0;
    for (i, a) in angles.iter().enumerate() {
        out[i] = s * a.cos();
        s *= a.sin();
    }
    out[n - 1] = s;
    out
}

/// Inverse of [`sphere_point`] for a nonzero vector.
pub fn sphere_angles(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut angles = vec![0.0; n - 1];
    for i in 0..n - 1 {
        let tail = v[i + 1..].iter().map(|c| c * c).sum::<f64>().sqrt();
        angles[i] = tail.atan2(v[i]);
    }
    if n >= 2 && v[n - 1] < 0.0 {
        angles[n - 2] = -angles[n - 2];
    }
    angles
}

impl ShootingUnknowns {
    pub fn decode(state_dim: usize, z: &[f64]) -> Self {
        let a = state_dim - 1;
        Self {
            p1: sphere_point(&z[..a]),
            p2: sphere_point(&z[a..2 * a]),
            tau: z[2 * a],
            freed: z[2 * a + 1..].to_vec(),
        }
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut z = sphere_angles(&self.p1);
        z.extend(sphere_angles(&self.p2));
        z.push(self.tau);
        z.extend_from_slice(&self.freed);
        z
    }

    /// Angle-free representation used to compare roots.
    fn canonical(&self) -> Vec<f64> {
        let mut c = self.p1.clone();
        c.extend_from_slice(&self.p2);
        c.push(self.tau);
        c.extend_from_slice(&self.freed);
        c
    }
}

/// The two extremal arcs generated by a shooting vector.
#[derive(Clone, Debug)]
pub struct Arcs {
    pub forward: IntegrationResult,
    pub backward: IntegrationResult,
    pub unknowns: ShootingUnknowns,
    pub terminal: Vec<f64>,
}

/// Propagates both arcs for shooting vector `z`.
pub fn propagate_arcs<E: ExtremalField>(
    problem: &P2Problem<E>,
    z: &[f64],
    tol: f64,
    max_step: f64,
) -> Result<Arcs, NumericsError> {
    let n = problem.state_dim();
    let unknowns = ShootingUnknowns::decode(n, z);
    let tau = unknowns.tau.clamp(0.0, 1.0);
    let t = problem.t_final;
    let terminal = problem.terminal_state(&unknowns.freed);
    let forward = propagate_extremal(
        &problem.field,
        &problem.chi_i,
        &unknowns.p1,
        tau * t,
        Direction::Forward,
        tol,
        max_step,
    )?;
    let backward = propagate_extremal(
        &problem.field,
        &terminal,
        &unknowns.p2,
        (1.0 - tau) * t,
        Direction::Backward,
        tol,
        max_step,
    )?;
    Ok(Arcs {
        forward,
        backward,
        unknowns,
        terminal,
    })
}

/// Junction gap `chi_1(tau T) - chi_2((1 - tau) T)`.
pub fn junction_gap(arcs: &Arcs, n: usize) -> Vec<f64> {
    let a = arcs.forward.final_state();
    let b = arcs.backward.final_state();
    (0..n).map(|i| a[i] - b[i]).collect()
}

/// Shooting residual in `z` with ODE tolerance `tol`. Propagation failures
/// and incomplete arcs give a non-finite residual.
pub fn assemble_residual<E: ExtremalField>(
    problem: &P2Problem<E>,
    tol: f64,
) -> impl Fn(&[f64]) -> Vec<f64> + Sync + '_ {
    let n = problem.state_dim();
    move |z: &[f64]| match propagate_arcs(problem, z, tol, f64::INFINITY) {
        Ok(arcs) if arcs.forward.converged() && arcs.backward.converged() => junction_gap(&arcs, n),
        _ => vec![f64::NAN; n],
    }
}

/// Uniformly sampled state, costate and control over `[0, T]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

/// Constant control applied on `[t_start, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub control: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct P2Solution {
    pub p1_0: Vec<f64>,
    pub p2_0: Vec<f64>,
    pub tau: f64,
    pub freed_values: Vec<f64>,
    pub concat_time: f64,
    pub terminal_state: Vec<f64>,
    pub trajectory: Trajectory,
    /// Piecewise-constant control in real time. Only meaningful for
    /// bang-bang fields; empty otherwise.
    pub control_schedule: Vec<ControlSegment>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub terminal_error: f64,
    pub junction_error: f64,
    pub max_hamiltonian_violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct P2Options {
    pub starts: usize,
    pub seed: u64,
    /// Optional starting value for `tau`. Held fixed in a first pass.
    pub tau_seed: Option<f64>,
    /// Optional starting values for the free terminal components. Held
    /// fixed in a first pass.
    pub freed_seed: Option<Vec<f64>>,
    pub residual_tol: f64,
    pub search_ode_tol: f64,
    pub polish_ode_tol: f64,
    pub max_iters: usize,
    pub samples: usize,
    pub dedup_distance: f64,
}

impl Default for P2Options {
    fn default() -> Self {
        Self {
            starts: 64,
            seed: 0,
            tau_seed: None,
            freed_seed: None,
            residual_tol: 1e-9,
            search_ode_tol: 1e-8,
            polish_ode_tol: 1e-10,
            max_iters: 200,
            samples: 1001,
            dedup_distance: 1e-4,
        }
    }
}

/// Stream-split seed for start `i`.
fn start_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: f64 = v.iter().map(|c| c * c).sum();
        if r2 > 1e-6 && r2 <= 1.0 {
            let r = r2.sqrt();
            return v.into_iter().map(|c| c / r).collect();
        }
    }
}

fn bounds<E: ExtremalField>(problem: &P2Problem<E>) -> (Vec<f64>, Vec<f64>) {
    let k = problem.n_unknowns();
    let a = 2 * (problem.state_dim() - 1);
    let mut lower = vec![f64::NEG_INFINITY; k];
    let mut upper = vec![f64::INFINITY; k];
    lower[a] = 0.0;
    upper[a] = 1.0;
    (lower, upper)
}

/// Odd starts continue the forward extremal over the whole horizon and seed
/// the backward costate and free components from its endpoint, so a single
/// unbroken extremal is an exact root whenever it meets the fixed
/// components. Even starts sample everything at random.
fn sample_start<E: ExtremalField>(problem: &P2Problem<E>, opts: &P2Options, i: usize) -> Vec<f64> {
    let n = problem.state_dim();
    let mut rng = start_rng(opts.seed, i);
    let p1 = random_unit(&mut rng, n);
    let mut p2 = random_unit(&mut rng, n);
    let tau = opts.tau_seed.unwrap_or_else(|| rng.gen_range(0.0..1.0));
    let scale = problem
        .chi_i
        .iter()
        .chain(problem.chi_f_spec.iter().flatten())
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut freed: Vec<f64> = match &opts.freed_seed {
        Some(f) => f.clone(),
        None => (0..problem.n_free()).map(|_| rng.gen_range(-scale..scale)).collect(),
    };
    if i % 2 == 1 {
        let whole = propagate_extremal(
            &problem.field,
            &problem.chi_i,
            &p1,
            problem.t_final,
            Direction::Forward,
            opts.search_ode_tol,
            f64::INFINITY,
        );
        if let Ok(res) = whole {
            let end = res.final_state();
            let pn = distance(&end[n..], &vec![0.0; n]);
            if res.converged() && pn > 0.0 && pn.is_finite() {
                p2 = end[n..].iter().map(|c| -c / pn).collect();
                if opts.freed_seed.is_none() {
                    freed = problem
                        .chi_f_spec
                        .iter()
                        .zip(&end[..n])
                        .filter(|(c, _)| c.is_none())
                        .map(|(_, v)| *v)
                        .collect();
                }
            }
        }
    }
    ShootingUnknowns { p1, p2, tau, freed }.encode()
}

fn lm_pass<R>(residual: &R, x0: Vec<f64>, lower: &[f64], upper: &[f64], tol: f64, max_iters: usize) -> Option<RootResult>
where
    R: Fn(&[f64]) -> Vec<f64>,
{
    let problem = RootProblem::new(residual, x0)
        .with_bounds(lower.to_vec(), upper.to_vec())
        .with_residual_tol(tol)
        .with_max_iters(max_iters);
    solve_lm(&problem).ok()
}

fn run_start<E: ExtremalField>(problem: &P2Problem<E>, opts: &P2Options, i: usize) -> Option<RootResult> {
    let start = sample_start(problem, opts, i);
    let (lower, upper) = bounds(problem);
    let a = 2 * (problem.state_dim() - 1);
    let coarse_tol = (opts.residual_tol * 1e3).max(opts.search_ode_tol * 1e2);
    let search = assemble_residual(problem, opts.search_ode_tol);
    let polish = assemble_residual(problem, opts.polish_ode_tol);

    let mut x = start;
    let seeded = opts.tau_seed.is_some() || opts.freed_seed.is_some();
    if seeded {
        let (mut lo, mut hi) = (lower.clone(), upper.clone());
        if opts.tau_seed.is_some() {
            lo[a] = x[a];
            hi[a] = x[a];
        }
        if opts.freed_seed.is_some() {
            for j in a + 1..x.len() {
                lo[j] = x[j];
                hi[j] = x[j];
            }
        }
        let pinned = lm_pass(&search, x.clone(), &lo, &hi, coarse_tol, opts.max_iters)?;
        x = pinned.x;
        let pinned = lm_pass(&polish, x.clone(), &lo, &hi, opts.residual_tol, opts.max_iters)?;
        if pinned.converged {
            return Some(pinned);
        }
        x = pinned.x;
    }
    let coarse = lm_pass(&search, x, &lower, &upper, coarse_tol, opts.max_iters)?;
    if !coarse.converged {
        return Some(coarse);
    }
    let mut fine = lm_pass(&polish, coarse.x, &lower, &upper, opts.residual_tol, opts.max_iters)?;
    fine.iterations += coarse.iterations;
    Some(fine)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Multi-start solve with default options and `starts` random starts.
pub fn solve_p2<E: ExtremalField>(problem: &P2Problem<E>, starts: usize) -> Result<Vec<P2Solution>, P2Error> {
    solve_p2_with(
        problem,
        &P2Options {
            starts,
            ..P2Options::default()
        },
    )
}

/// Multi-start Levenberg–Marquardt over the shooting vector. Returns every
/// distinct converged root, best residual first. An empty list means no
/// start converged.
pub fn solve_p2_with<E: ExtremalField>(problem: &P2Problem<E>, opts: &P2Options) -> Result<Vec<P2Solution>, P2Error> {
    if opts.starts == 0 {
        return Err(P2Error::InvalidProblem("starts must be at least 1".into()));
    }
    if let Some(t) = opts.tau_seed {
        if !(0.0..=1.0).contains(&t) {
            return Err(P2Error::InvalidProblem(format!("tau seed {t} outside [0, 1]")));
        }
    }
    if let Some(f) = &opts.freed_seed {
        if f.len() != problem.n_free() {
            return Err(P2Error::InvalidProblem(format!(
                "{} freed seeds for {} free components",
                f.len(),
                problem.n_free()
            )));
        }
    }
    let mut roots: Vec<(usize, RootResult)> = (0..opts.starts)
        .into_par_iter()
        .filter_map(|i| run_start(problem, opts, i).map(|r| (i, r)))
        .filter(|(_, r)| r.converged)
        .collect();
    roots.sort_by(|(ia, a), (ib, b)| a.residual_norm.total_cmp(&b.residual_norm).then(ia.cmp(ib)));

    let n = problem.state_dim();
    let mut kept: Vec<(Vec<f64>, RootResult)> = Vec::new();
    for (_, r) in roots {
        let c = ShootingUnknowns::decode(n, &r.x).canonical();
        if kept.iter().all(|(k, _)| distance(k, &c) > opts.dedup_distance) {
            kept.push((c, r));
        }
    }
    kept.into_iter()
        .map(|(_, r)| build_solution(problem, &r.x, r.iterations, opts))
        .collect()
}

fn control_schedule<E: ExtremalField>(problem: &P2Problem<E>, arcs: &Arcs) -> Vec<ControlSegment> {
    let n = problem.state_dim();
    let m = problem.field.control_dim();
    let t = problem.t_final;
    let tc = arcs.forward.final_time();
    let mut segments = Vec::new();

    let control_mid = |res: &IntegrationResult, a: f64, b: f64, flip: f64| {
        let v = res.state_at(0.5 * (a + b));
        let (x, p) = v.split_at(n);
        let q: Vec<f64> = p.iter().map(|c| flip * c).collect();
        let mut u = vec![0.0; m];
        problem.field.maximizer(x, &q, &mut u);
        u
    };

    let mut cuts = vec![0.0];
    cuts.extend(arcs.forward.switch_times.iter().copied());
    cuts.push(tc);
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            segments.push(ControlSegment {
                t_start: w[0],
                t_end: w[1],
                control: control_mid(&arcs.forward, w[0], w[1], 1.0),
            });
        }
    }
    // Backward arc time s maps to real time T - s.
    let tb = arcs.backward.final_time();
    let mut cuts = vec![0.0];
    cuts.extend(arcs.backward.switch_times.iter().copied());
    cuts.push(tb);
    for w in cuts.windows(2).rev() {
        if w[1] > w[0] {
            segments.push(ControlSegment {
                t_start: t - w[1],
                t_end: t - w[0],
                control: control_mid(&arcs.backward, w[0], w[1], -1.0),
            });
        }
    }
    segments
}

/// Packages shooting vector `z` as a solution: re-propagates at polish
/// tolerance and samples the joined trajectory.
pub fn build_solution<E: ExtremalField>(
    problem: &P2Problem<E>,
    z: &[f64],
    iterations: usize,
    opts: &P2Options,
) -> Result<P2Solution, P2Error> {
    let n = problem.state_dim();
    let m = problem.field.control_dim();
    let t = problem.t_final;
    let max_step = t / 200.0;
    let arcs = propagate_arcs(problem, z, opts.polish_ode_tol, max_step)?;
    let gap = junction_gap(&arcs, n);
    let tau = arcs.unknowns.tau.clamp(0.0, 1.0);
    let tc = tau * t;

    let samples = opts.samples.max(2);
    let mut traj = Trajectory::default();
    for k in 0..samples {
        let time = t * k as f64 / (samples - 1) as f64;
        let (v, flip) = if time <= tc {
            (arcs.forward.state_at(time), 1.0)
        } else {
            (arcs.backward.state_at(t - time), -1.0)
        };
        let (x, p) = v.split_at(n);
        let q: Vec<f64> = p.iter().map(|c| flip * c).collect();
        let mut u = vec![0.0; m];
        problem.field.maximizer(x, &q, &mut u);
        traj.times.push(time);
        traj.states.push(x.to_vec());
        traj.costates.push(p.to_vec());
        traj.controls.push(u);
    }
    let control_schedule = if problem.field.switch_value(&problem.chi_i, &arcs.unknowns.p1).is_some() {
        control_schedule(problem, &arcs)
    } else {
        Vec::new()
    };

    Ok(P2Solution {
        p1_0: arcs.unknowns.p1.clone(),
        p2_0: arcs.unknowns.p2.clone(),
        tau,
        freed_values: arcs.unknowns.freed.clone(),
        concat_time: tc,
        terminal_state: arcs.terminal.clone(),
        trajectory: traj,
        control_schedule,
        residual_norm: distance(&gap, &vec![0.0; n]),
        iterations,
        z: z.to_vec(),
    })
}

fn max_hamiltonian_violation<E: ExtremalField>(
    problem: &P2Problem<E>,
    res: &IntegrationResult,
    flip: f64,
    n_times: usize,
) -> f64 {
    let n = problem.state_dim();
    let m = problem.field.control_dim();
    let omega = problem.field.control_samples();
    let span = res.final_time();
    let mut worst = 0.0_f64;
    for k in 0..n_times {
        let s = if n_times > 1 { span * k as f64 / (n_times - 1) as f64 } else { 0.0 };
        let v = res.state_at(s);
        let (x, p) = v.split_at(n);
        let q: Vec<f64> = p.iter().map(|c| flip * c).collect();
        let mut u = vec![0.0; m];
        problem.field.maximizer(x, &q, &mut u);
        let h_star = problem.field.hamiltonian(x, &q, &u);
        for w in &omega {
            worst = worst.max(problem.field.hamiltonian(x, &q, w) - h_star);
        }
    }
    worst
}

/// Re-integrates the solution's control through `x' = f(x, u)` in real time
/// and reports terminal error, junction mismatch and the worst Hamiltonian
/// maximization violation on the control sample grid.
pub fn verify_solution<E: ExtremalField>(sol: &P2Solution, problem: &P2Problem<E>) -> ResidualReport {
    let n = problem.state_dim();
    let t = problem.t_final;
    let tol = 1e-11;
    let failed = |residual: Vec<f64>| ResidualReport {
        residual_norm: f64::INFINITY,
        residual,
        terminal_error: f64::INFINITY,
        junction_error: f64::INFINITY,
        max_hamiltonian_violation: f64::INFINITY,
        iterations: sol.iterations,
        converged: false,
    };

    let arcs = match propagate_arcs(problem, &sol.z_with_tau(sol.tau), tol, f64::INFINITY) {
        Ok(a) => a,
        Err(_) => return failed(vec![f64::NAN; n]),
    };
    let residual = junction_gap(&arcs, n);
    let residual_norm = distance(&residual, &vec![0.0; n]);

    // Open-loop replay of the control through the original dynamics.
    let segments = &sol.control_schedule;
    let mut x = problem.chi_i.clone();
    let mut x_at_junction = None;
    let replay_ok = if segments.is_empty() {
        // Smooth maximizer: in real time the backward arc is a forward
        // extremal with costate -p, started from the junction.
        let junction = arcs.forward.final_state()[..n].to_vec();
        let q: Vec<f64> = arcs.backward.final_state()[n..].iter().map(|c| -c).collect();
        x_at_junction = Some(junction.clone());
        match propagate_extremal(&problem.field, &junction, &q, (1.0 - sol.tau) * t, Direction::Forward, tol, f64::INFINITY) {
            Ok(r) if r.converged() => {
                x = r.final_state()[..n].to_vec();
                true
            }
            _ => false,
        }
    } else {
        let mut ok = true;
        for seg in segments {
            if seg.t_end <= seg.t_start {
                continue;
            }
            if x_at_junction.is_none() && seg.t_start >= sol.concat_time - 1e-12 {
                x_at_junction = Some(x.clone());
            }
            let u = seg.control.clone();
            let field = &problem.field;
            let ode = OdeProblem::new(
                move |_t: f64, v: &[f64], out: &mut [f64]| field.dynamics(v, &u, out),
                seg.t_start,
                seg.t_end,
                x.clone(),
            )
            .with_tolerances(tol, tol);
            match integrate_adaptive(&ode) {
                Ok(r) if r.converged() => x = r.final_state().to_vec(),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if x_at_junction.is_none() {
            x_at_junction = Some(x.clone());
        }
        ok
    };
    if !replay_ok {
        return failed(residual);
    }

    let mut terminal_error = 0.0_f64;
    for (i, spec) in problem.chi_f_spec.iter().enumerate() {
        if let Some(v) = spec {
            terminal_error = terminal_error.max((x[i] - v).abs());
        }
    }
    let junction_state = arcs.backward.final_state()[..n].to_vec();
    let junction_error = distance(x_at_junction.as_deref().unwrap_or(&junction_state), &junction_state);

    let hv = max_hamiltonian_violation(problem, &arcs.forward, 1.0, 100)
        .max(max_hamiltonian_violation(problem, &arcs.backward, -1.0, 100));

    ResidualReport {
        residual,
        residual_norm,
        terminal_error,
        junction_error,
        max_hamiltonian_violation: hv,
        iterations: sol.iterations,
        converged: residual_norm.is_finite(),
    }
}

impl P2Solution {
    /// Shooting vector with `tau` replaced.
    pub fn z_with_tau(&self, tau: f64) -> Vec<f64> {
        let mut z = self.z.clone();
        let a = 2 * (self.p1_0.len() - 1);
        z[a] = tau;
        z
    }
}

/// The field `-f`. Its extremals are the backward extremals of `f`.
#[derive(Clone, Debug)]
pub struct Reversed<E>(pub E);

impl<E: ExtremalField> ExtremalField for Reversed<E> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.0.control_dim()
    }

    fn dynamics(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self.0.dynamics(x, u, dx);
        dx.iter_mut().for_each(|d| *d = -*d);
    }

    fn costate_dynamics(&self, x: &[f64], u: &[f64], p: &[f64], dp: &mut [f64]) {
        self.0.costate_dynamics(x, u, p, dp);
        dp.iter_mut().for_each(|d| *d = -*d);
    }

    fn maximizer(&self, x: &[f64], p: &[f64], u: &mut [f64]) {
        let q: Vec<f64> = p.iter().map(|c| -c).collect();
        self.0.maximizer(x, &q, u);
    }

    fn switch_value(&self, x: &[f64], p: &[f64]) -> Option<f64> {
        let q: Vec<f64> = p.iter().map(|c| -c).collect();
        self.0.switch_value(x, &q)
    }

    fn branch_control(&self, x: &[f64], p: &[f64], branch: Branch, u: &mut [f64]) {
        let q: Vec<f64> = p.iter().map(|c| -c).collect();
        self.0.branch_control(x, &q, branch, u);
    }

    fn control_samples(&self) -> Vec<Vec<f64>> {
        self.0.control_samples()
    }
}

impl<E: ExtremalField + Clone> P2Problem<E> {
    /// Problem from `chi_f` back to `chi_i` under `-f`. Requires a fully
    /// fixed terminal state.
    pub fn reversed(&self) -> Result<P2Problem<Reversed<E>>, P2Error> {
        let chi_f: Option<Vec<f64>> = self.chi_f_spec.iter().copied().collect();
        let chi_f = chi_f.ok_or_else(|| {
            P2Error::InvalidProblem("reversal needs a fully fixed terminal state".into())
        })?;
        P2Problem::new(
            Reversed(self.field.clone()),
            chi_f,
            self.chi_i.iter().map(|v| Some(*v)).collect(),
            self.t_final,
        )
    }
}

impl P2Solution {
    /// Shooting vector of the same concatenation seen from the reversed
    /// problem: the arcs swap roles and `tau` becomes `1 - tau`.
    pub fn reversed_z(&self) -> Vec<f64> {
        ShootingUnknowns {
            p1: self.p2_0.clone(),
            p2: self.p1_0.clone(),
            tau: 1.0 - self.tau,
            freed: Vec::new(),
        }
        .encode()
    }
}
