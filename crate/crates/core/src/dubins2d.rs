//! Planar unit-speed paths with turning radius 1 and prescribed length,
//! built from two words over circular arcs (C) and straight segments (S).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::p2::Trajectory;
use crate::rootfind::{solve_lm, RootProblem};

/// Lengths below this are treated as absent when naming a path's structure.
pub const PRUNE_LENGTH: f64 = 1e-9;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum Dubins2dError {
    #[error("invalid Dubins 2D input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config2D {
    pub x: f64,
    pub y: f64,
    pub gamma: f64,
}

impl Config2D {
    pub const ORIGIN: Config2D = Config2D { x: 0.0, y: 0.0, gamma: 0.0 };

    pub fn new(x: f64, y: f64, gamma: f64) -> Self {
        Self { x, y, gamma }
    }
}

/// Wraps an angle into `(-pi, pi]` via `atan2(sin, cos)`.
pub fn wrap_angle(a: f64) -> f64 {
    a.sin().atan2(a.cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind2D {
    L,
    R,
    S,
}

impl Kind2D {
    pub fn letter(self) -> char {
        match self {
            Kind2D::L => 'L',
            Kind2D::R => 'R',
            Kind2D::S => 'S',
        }
    }

    /// Steering input on this primitive.
    pub fn control(self) -> f64 {
        match self {
            Kind2D::L => 1.0,
            Kind2D::R => -1.0,
            Kind2D::S => 0.0,
        }
    }

    fn class(self) -> char {
        match self {
            Kind2D::S => 'S',
            _ => 'C',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive2D {
    pub kind: Kind2D,
    pub length: f64,
}

impl Primitive2D {
    pub fn new(kind: Kind2D, length: f64) -> Self {
        Self { kind, length }
    }
}

/// Advances `c` along one primitive in closed form.
pub fn step_2d(c: Config2D, p: Primitive2D) -> Config2D {
    let (g, l) = (c.gamma, p.length);
    match p.kind {
        Kind2D::S => Config2D::new(c.x + l * g.cos(), c.y + l * g.sin(), g),
        Kind2D::L => Config2D::new(c.x + (g + l).sin() - g.sin(), c.y - (g + l).cos() + g.cos(), g + l),
        Kind2D::R => Config2D::new(c.x - (g - l).sin() + g.sin(), c.y + (g - l).cos() - g.cos(), g - l),
    }
}

/// At most three primitives forming a CSC or CCC word or a subsegment of one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Word2D {
    pub primitives: Vec<Primitive2D>,
}

impl Word2D {
    pub fn new(primitives: Vec<Primitive2D>) -> Result<Self, Dubins2dError> {
        let kinds: Vec<Kind2D> = primitives.iter().map(|p| p.kind).collect();
        if !is_word(&kinds) {
            return Err(Dubins2dError::InvalidInput(format!(
                "{} is not a CSC/CCC subsegment",
                letters(&kinds)
            )));
        }
        if primitives.iter().any(|p| !(p.length >= 0.0 && p.length.is_finite())) {
            return Err(Dubins2dError::InvalidInput("lengths must be finite and nonnegative".into()));
        }
        Ok(Self { primitives })
    }

    pub fn length(&self) -> f64 {
        self.primitives.iter().map(|p| p.length).sum()
    }
}

/// Endpoint of a primitive sequence started at `start`.
pub fn endpoint_2d(start: Config2D, primitives: &[Primitive2D]) -> Config2D {
    primitives.iter().fold(start, |c, p| step_2d(c, *p))
}

fn letters(kinds: &[Kind2D]) -> String {
    kinds.iter().map(|k| k.letter()).collect()
}

/// Whether `kinds` is a CSC or CCC word (with explicit directions) or a
/// contiguous piece of one. Same-direction neighbours are allowed since a
/// zero-length middle arc joins them.
pub fn is_word(kinds: &[Kind2D]) -> bool {
    use Kind2D::*;
    match kinds.len() {
        0 => true,
        1 => true,
        2 => !(kinds[0] == S && kinds[1] == S),
        3 => match (kinds[0], kinds[1], kinds[2]) {
            (a, S, b) => a != S && b != S,
            (a, b, c) => a != S && b != S && c != S,
        },
        _ => false,
    }
}

/// A reduced primitive sequence together with a split into two words.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pattern2D {
    pub kinds: Vec<Kind2D>,
    /// Number of leading primitives that belong to the first word.
    pub split: usize,
}

impl Pattern2D {
    pub fn name(&self) -> String {
        letters(&self.kinds)
    }
}

fn reduce(seq: &[Kind2D]) -> Vec<Kind2D> {
    let mut out: Vec<Kind2D> = Vec::new();
    for k in seq {
        if out.last() != Some(k) {
            out.push(*k);
        }
    }
    out
}

/// Every sequence obtained by joining two words and merging equal
/// neighbours at the junction, each listed once. Sequences are reduced
/// (no equal neighbours), so every length is a genuine degree of freedom.
pub fn pattern_catalog_2d() -> Vec<Pattern2D> {
    use Kind2D::*;
    let all = [L, R, S];
    let mut words: Vec<Vec<Kind2D>> = vec![vec![]];
    for n in 1..=3 {
        let mut acc: Vec<Vec<Kind2D>> = vec![vec![]];
        for _ in 0..n {
            acc = acc
                .into_iter()
                .flat_map(|w| {
                    all.iter().map(move |k| {
                        let mut v = w.clone();
                        v.push(*k);
                        v
                    })
                })
                .collect();
        }
        words.extend(acc.into_iter().filter(|w| is_word(w) && reduce(w).len() == w.len()));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for w1 in &words {
        for w2 in &words {
            let mut joined = w1.clone();
            joined.extend(w2);
            let kinds = reduce(&joined);
            if kinds.is_empty() || !seen.insert(kinds.clone()) {
                continue;
            }
            out.push(Pattern2D { kinds, split: w1.len() });
        }
    }
    out.sort();
    out
}

/// Full primitive list for `pattern` with the last length set to
/// `t - sum(free)` and clamped at zero.
pub fn pattern_primitives(pattern: &Pattern2D, t: f64, free: &[f64]) -> (Vec<Primitive2D>, f64) {
    let used: f64 = free.iter().sum();
    let last = t - used;
    let mut prims: Vec<Primitive2D> = pattern
        .kinds
        .iter()
        .zip(free)
        .map(|(k, l)| Primitive2D::new(*k, *l))
        .collect();
    prims.push(Primitive2D::new(*pattern.kinds.last().expect("non-empty pattern"), last.max(0.0)));
    (prims, (-last).max(0.0))
}

/// `(dx, dy, wrapped dgamma, length deficit)` between the path endpoint and
/// `goal`. The fourth component is zero whenever the free lengths fit in `t`.
pub fn word_residual_2d(goal: Config2D, t: f64, pattern: &Pattern2D, free: &[f64]) -> [f64; 4] {
    let (prims, deficit) = pattern_primitives(pattern, t, free);
    let e = endpoint_2d(Config2D::ORIGIN, &prims);
    [e.x - goal.x, e.y - goal.y, wrap_angle(e.gamma - goal.gamma), deficit]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoWordPath2D {
    pub word1: Word2D,
    pub word2: Word2D,
    pub total_length: f64,
    pub residual_norm: f64,
    pub pattern: Pattern2D,
}

impl TwoWordPath2D {
    pub fn primitives(&self) -> Vec<Primitive2D> {
        self.word1.primitives.iter().chain(&self.word2.primitives).copied().collect()
    }

    /// Primitives longer than [`PRUNE_LENGTH`], with equal neighbours merged.
    pub fn pruned(&self) -> Vec<Primitive2D> {
        let mut out: Vec<Primitive2D> = Vec::new();
        for p in self.primitives().into_iter().filter(|p| p.length >= PRUNE_LENGTH) {
            match out.last_mut() {
                Some(q) if q.kind == p.kind => q.length += p.length,
                _ => out.push(p),
            }
        }
        out
    }

    /// Pruned structure in C/S letters, e.g. `CSCC`.
    pub fn structure(&self) -> String {
        self.pruned().iter().map(|p| p.kind.class()).collect()
    }

    /// Pruned structure with turn directions, e.g. `LSRL`.
    pub fn directed_structure(&self) -> String {
        self.pruned().iter().map(|p| p.kind.letter()).collect()
    }

    pub fn endpoint(&self) -> Config2D {
        endpoint_2d(Config2D::ORIGIN, &self.primitives())
    }
}

#[derive(Clone, Debug)]
pub struct Dubins2dOptions {
    pub starts_per_pattern: usize,
    pub seed: u64,
    pub residual_tol: f64,
    pub max_iters: usize,
}

impl Default for Dubins2dOptions {
    fn default() -> Self {
        Self {
            starts_per_pattern: 8,
            seed: 0,
            residual_tol: 1e-10,
            max_iters: 200,
        }
    }
}

/// Solves for all two-word paths of length `t` from the origin to `goal`.
pub fn solve_dubins2d(goal: Config2D, t: f64, starts_per_pattern: usize) -> Result<Vec<TwoWordPath2D>, Dubins2dError> {
    solve_dubins2d_with(
        goal,
        t,
        &Dubins2dOptions {
            starts_per_pattern,
            ..Dubins2dOptions::default()
        },
    )
}

fn random_split(rng: &mut ChaCha8Rng, k: usize, t: f64) -> Vec<f64> {
    // Uniform on the simplex via sorted uniforms.
    let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.0..t)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(k - 1);
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out
}

fn make_path(pattern: &Pattern2D, t: f64, free: &[f64], residual_norm: f64) -> TwoWordPath2D {
    let (prims, _) = pattern_primitives(pattern, t, free);
    let (a, b) = prims.split_at(pattern.split.min(prims.len()));
    TwoWordPath2D {
        word1: Word2D { primitives: a.to_vec() },
        word2: Word2D { primitives: b.to_vec() },
        total_length: prims.iter().map(|p| p.length).sum(),
        residual_norm,
        pattern: pattern.clone(),
    }
}

pub fn solve_dubins2d_with(goal: Config2D, t: f64, opts: &Dubins2dOptions) -> Result<Vec<TwoWordPath2D>, Dubins2dError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Dubins2dError::InvalidInput(format!("length must be finite and >= 0, got {t}")));
    }
    if !(goal.x.is_finite() && goal.y.is_finite() && goal.gamma.is_finite()) {
        return Err(Dubins2dError::InvalidInput("goal must be finite".into()));
    }
    if opts.starts_per_pattern == 0 {
        return Err(Dubins2dError::InvalidInput("starts_per_pattern must be >= 1".into()));
    }
    let catalog = pattern_catalog_2d();
    let mut found: Vec<TwoWordPath2D> = catalog
        .par_iter()
        .enumerate()
        .flat_map_iter(|(pi, pattern)| {
            let k = pattern.kinds.len();
            let residual = |z: &[f64]| word_residual_2d(goal, t, pattern, z).to_vec();
            let mut hits = Vec::new();
            let starts = if k == 1 { 1 } else { opts.starts_per_pattern };
            for s in 0..starts {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream((pi * 1_000_003 + s) as u64);
                let x0 = random_split(&mut rng, k, t);
                let problem = RootProblem::new(&residual, x0)
                    .with_bounds(vec![0.0; k - 1], vec![t; k - 1])
                    .with_residual_tol(opts.residual_tol)
                    .with_max_iters(opts.max_iters);
                if let Ok(r) = solve_lm(&problem) {
                    if r.converged {
                        hits.push(make_path(pattern, t, &r.x, r.residual_norm));
                    }
                }
            }
            hits
        })
        .collect();
    found.sort_by(|a, b| {
        a.residual_norm
            .total_cmp(&b.residual_norm)
            .then_with(|| a.pattern.cmp(&b.pattern))
    });
    let mut kept: Vec<TwoWordPath2D> = Vec::new();
    for p in found {
        let pr = p.pruned();
        let dup = kept.iter().any(|q| {
            let qr = q.pruned();
            qr.len() == pr.len()
                && qr.iter().zip(&pr).all(|(a, b)| a.kind == b.kind && (a.length - b.length).abs() < 1e-6)
        });
        if !dup {
            kept.push(p);
        }
    }
    Ok(kept)
}

/// `n` arclength-equispaced samples. States are `(x, y, gamma)` with the
/// heading unwrapped; controls are the steering input of the primitive in
/// force (the left one at a boundary).
pub fn sample_path_2d(path: &TwoWordPath2D, n: usize) -> Result<Trajectory, Dubins2dError> {
    if n < 2 {
        return Err(Dubins2dError::InvalidInput("need at least 2 samples".into()));
    }
    let prims = path.primitives();
    let total: f64 = prims.iter().map(|p| p.length).sum();
    let mut traj = Trajectory::default();
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        let (c, u) = config_at(&prims, s);
        traj.times.push(s);
        traj.states.push(vec![c.x, c.y, c.gamma]);
        traj.costates.push(Vec::new());
        traj.controls.push(vec![u]);
    }
    Ok(traj)
}

/// Configuration after arclength `s` along `prims`.
pub fn config_at(prims: &[Primitive2D], s: f64) -> (Config2D, f64) {
    let mut c = Config2D::ORIGIN;
    let mut left = s;
    let mut u = prims.first().map(|p| p.kind.control()).unwrap_or(0.0);
    for p in prims {
        if p.length <= 0.0 {
            continue;
        }
        u = p.kind.control();
        if left <= p.length {
            return (step_2d(c, Primitive2D::new(p.kind, left.max(0.0))), u);
        }
        c = step_2d(c, *p);
        left -= p.length;
    }
    (c, u)
}
