//! Unit-speed paths in R^3 with curvature at most 1 and prescribed length,
//! built from two words over circular arcs (C), straight segments (S) and
//! helicoidal arcs (H) of curvature 1 whose torsion follows
//! `tau'' = 3 tau'^2 / (2 tau) - 2 tau^3 + 2 tau - zeta tau sqrt|tau|`.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{integrate_adaptive, NumericsError, OdeProblem};
use crate::p2::Trajectory;
use crate::rootfind::{solve_lm, RootProblem};

/// Smallest admissible |torsion| on an H arc.
pub const TORSION_FLOOR: f64 = 1e-6;

/// Residual value reported when an H arc hits the torsion floor.
pub const TORSION_PENALTY: f64 = 1e3;

/// Default integration tolerance for H arcs.
pub const H_ARC_TOL: f64 = 1e-11;

/// Lengths below this are treated as absent when naming a path's structure.
pub const PRUNE_LENGTH: f64 = 1e-9;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum Dubins3dError {
    #[error("invalid Dubins 3D input: {0}")]
    InvalidInput(String),
    #[error("torsion {tau:e} fell below the floor at arclength {s}")]
    TorsionFloor { s: f64, tau: f64 },
    #[error("H arc propagation failed: {0}")]
    Propagation(String),
}

impl From<NumericsError> for Dubins3dError {
    fn from(e: NumericsError) -> Self {
        Dubins3dError::Propagation(e.to_string())
    }
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Position plus an orthonormal pair (tangent, normal); the binormal is
/// `tangent x normal`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame3D {
    pub position: [f64; 3],
    pub tangent: [f64; 3],
    pub normal: [f64; 3],
}

impl Frame3D {
    pub const CANONICAL: Frame3D = Frame3D {
        position: [0.0; 3],
        tangent: [1.0, 0.0, 0.0],
        normal: [0.0, 1.0, 0.0],
    };

    pub fn binormal(&self) -> [f64; 3] {
        arr(v3(self.tangent).cross(&v3(self.normal)))
    }

    /// Largest deviation from orthonormality of (tangent, normal).
    pub fn orthonormality_error(&self) -> f64 {
        let (t, n) = (v3(self.tangent), v3(self.normal));
        (t.norm() - 1.0).abs().max((n.norm() - 1.0).abs()).max(t.dot(&n).abs())
    }

    /// Gram-Schmidt on (tangent, normal).
    pub fn orthonormalized(&self) -> Frame3D {
        let t = v3(self.tangent).normalize();
        let n = v3(self.normal);
        let n = (n - t * t.dot(&n)).normalize();
        Frame3D {
            position: self.position,
            tangent: arr(t),
            normal: arr(n),
        }
    }
}

/// Advances along a unit circle. The turn direction is
/// `cos(phi) normal + sin(phi) binormal`.
pub fn endpoint_c_arc(start: Frame3D, phi: f64, len: f64) -> Frame3D {
    let (t, n) = (v3(start.tangent), v3(start.normal));
    let b = t.cross(&n);
    let d = n * phi.cos() + b * phi.sin();
    let axis = Unit::new_normalize(t.cross(&d));
    let rot = Rotation3::from_axis_angle(&axis, len);
    let p = v3(start.position) + t * len.sin() + d * (1.0 - len.cos());
    Frame3D {
        position: arr(p),
        tangent: arr(rot * t),
        normal: arr(rot * n),
    }
}

pub fn endpoint_s(start: Frame3D, len: f64) -> Frame3D {
    let p = v3(start.position) + v3(start.tangent) * len;
    Frame3D { position: arr(p), ..start }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HParams {
    pub length: f64,
    pub tau0: f64,
    pub tau_dot0: f64,
    pub zeta: f64,
    /// Rotation of the starting normal about the tangent.
    pub psi: f64,
}

/// Second derivative of torsion along an H arc.
pub fn torsion_accel(tau: f64, tau_dot: f64, zeta: f64) -> f64 {
    1.5 * tau_dot * tau_dot / tau - 2.0 * tau.powi(3) + 2.0 * tau - zeta * tau * tau.abs().sqrt()
}

/// Final frame of an H arc with the torsion recorded at every accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct HArcEnd {
    pub frame: Frame3D,
    pub arclength: Vec<f64>,
    pub torsion: Vec<f64>,
    /// Orthonormality drift of the integrated frame before correction.
    pub drift: f64,
}

/// State layout: position, T, N, B, tau, tau'.
fn h_rhs(_s: f64, v: &[f64], out: &mut [f64], zeta: f64) {
    let tau = v[12];
    if !(tau.abs() >= TORSION_FLOOR) {
        out.fill(f64::NAN);
        return;
    }
    for i in 0..3 {
        out[i] = v[3 + i];
        out[3 + i] = v[6 + i];
        out[6 + i] = -v[3 + i] + tau * v[9 + i];
        out[9 + i] = -tau * v[6 + i];
    }
    out[12] = v[13];
    out[13] = torsion_accel(tau, v[13], zeta);
}

fn h_state(frame: &Frame3D, tau: f64, tau_dot: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(14);
    v.extend(frame.position);
    v.extend(frame.tangent);
    v.extend(frame.normal);
    v.extend(frame.binormal());
    v.push(tau);
    v.push(tau_dot);
    v
}

fn h_frame(v: &[f64]) -> Frame3D {
    Frame3D {
        position: [v[0], v[1], v[2]],
        tangent: [v[3], v[4], v[5]],
        normal: [v[6], v[7], v[8]],
    }
}

fn rotate_normal(start: Frame3D, psi: f64) -> Frame3D {
    let (n, b) = (v3(start.normal), v3(start.binormal()));
    Frame3D {
        normal: arr(n * psi.cos() + b * psi.sin()),
        ..start
    }
}

fn check_torsion(s: f64, tau: f64, sign: f64) -> Result<(), Dubins3dError> {
    if !tau.is_finite() {
        return Err(Dubins3dError::Propagation(format!("torsion not finite at arclength {s}")));
    }
    if tau.abs() < TORSION_FLOOR || tau.signum() != sign {
        return Err(Dubins3dError::TorsionFloor { s, tau });
    }
    Ok(())
}

/// Integrates `v` over `[0, len]`, checking the torsion at every step.
fn integrate_h_state(v: Vec<f64>, zeta: f64, len: f64, tol: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), Dubins3dError> {
    let sign = v[12].signum();
    check_torsion(0.0, v[12], sign)?;
    if len == 0.0 {
        let tau = v[12];
        return Ok((v, vec![0.0], vec![tau]));
    }
    let ode = OdeProblem::new(move |s: f64, x: &[f64], o: &mut [f64]| h_rhs(s, x, o, zeta), 0.0, len, v)
        .with_tolerances(tol, tol)
        .with_max_step(0.25);
    let res = integrate_adaptive(&ode)?;
    for (s, x) in res.times.iter().zip(&res.states) {
        check_torsion(*s, x[12], sign)?;
    }
    if !res.converged() {
        let s = res.final_time();
        return Err(Dubins3dError::TorsionFloor { s, tau: res.final_state()[12] });
    }
    let torsion = res.states.iter().map(|x| x[12]).collect();
    Ok((res.final_state().to_vec(), res.times, torsion))
}

pub fn integrate_h_arc(start: Frame3D, params: HParams) -> Result<HArcEnd, Dubins3dError> {
    integrate_h_arc_tol(start, params, H_ARC_TOL)
}

/// Rotates the starting normal by `psi`, then integrates the Frenet-Serret
/// frame with curvature 1 jointly with the torsion equation.
pub fn integrate_h_arc_tol(start: Frame3D, params: HParams, tol: f64) -> Result<HArcEnd, Dubins3dError> {
    if !(params.length >= 0.0 && params.length.is_finite()) {
        return Err(Dubins3dError::InvalidInput(format!("H length must be finite and >= 0, got {}", params.length)));
    }
    if ![params.tau0, params.tau_dot0, params.zeta, params.psi].iter().all(|x| x.is_finite()) {
        return Err(Dubins3dError::InvalidInput("H parameters must be finite".into()));
    }
    let frame0 = rotate_normal(start, params.psi);
    let v0 = h_state(&frame0, params.tau0, params.tau_dot0);
    let (v, arclength, torsion) = integrate_h_state(v0, params.zeta, params.length, tol)?;
    let raw = h_frame(&v);
    let b = v3([v[9], v[10], v[11]]);
    let drift = raw
        .orthonormality_error()
        .max((b.norm() - 1.0).abs())
        .max((b - v3(raw.tangent).cross(&v3(raw.normal))).amax());
    Ok(HArcEnd {
        frame: raw.orthonormalized(),
        arclength,
        torsion,
        drift,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind3D {
    C,
    S,
    H,
}

impl Kind3D {
    pub fn letter(self) -> char {
        match self {
            Kind3D::C => 'C',
            Kind3D::S => 'S',
            Kind3D::H => 'H',
        }
    }

    fn extra_unknowns(self) -> usize {
        match self {
            Kind3D::C => 1,
            Kind3D::S => 0,
            Kind3D::H => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Primitive3D {
    /// `axis` is the world-frame rotation axis fixed at assembly.
    C { phi: f64, axis: [f64; 3], length: f64 },
    S { length: f64 },
    H(HParams),
}

impl Primitive3D {
    pub fn kind(&self) -> Kind3D {
        match self {
            Primitive3D::C { .. } => Kind3D::C,
            Primitive3D::S { .. } => Kind3D::S,
            Primitive3D::H(_) => Kind3D::H,
        }
    }

    pub fn length(&self) -> f64 {
        match self {
            Primitive3D::C { length, .. } | Primitive3D::S { length } => *length,
            Primitive3D::H(h) => h.length,
        }
    }
}

/// Advances `start` along one primitive.
pub fn step_3d(start: Frame3D, p: &Primitive3D) -> Result<Frame3D, Dubins3dError> {
    Ok(match p {
        Primitive3D::C { phi, length, .. } => endpoint_c_arc(start, *phi, *length),
        Primitive3D::S { length } => endpoint_s(start, *length),
        Primitive3D::H(h) => integrate_h_arc(start, *h)?.frame,
    })
}

pub fn endpoint_3d(start: Frame3D, prims: &[Primitive3D]) -> Result<Frame3D, Dubins3dError> {
    prims.iter().try_fold(start, step_3d)
}

/// CSC, CCC, a subsegment of either, or a single H arc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Word3D {
    pub primitives: Vec<Primitive3D>,
}

impl Word3D {
    pub fn length(&self) -> f64 {
        self.primitives.iter().map(|p| p.length()).sum()
    }
}

/// Terminal condition: position always fixed, tangent fixed or free.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal3D {
    pub position: [f64; 3],
    pub tangent: Option<[f64; 3]>,
}

impl Goal3D {
    pub fn new(position: [f64; 3], tangent: Option<[f64; 3]>) -> Self {
        Self {
            position,
            tangent: tangent.map(|t| arr(v3(t).normalize())),
        }
    }

    fn validate(&self) -> Result<(), Dubins3dError> {
        if !self.position.iter().all(|x| x.is_finite()) {
            return Err(Dubins3dError::InvalidInput("goal position must be finite".into()));
        }
        if let Some(t) = self.tangent {
            if !t.iter().all(|x| x.is_finite()) || (v3(t).norm() - 1.0).abs() > 1e-9 {
                return Err(Dubins3dError::InvalidInput("goal tangent must be a unit vector".into()));
            }
        }
        Ok(())
    }

    pub fn residual_len(&self) -> usize {
        if self.tangent.is_some() {
            6
        } else {
            4
        }
    }
}

/// Two unit vectors orthogonal to `g` and to each other.
fn orthonormal_pair(g: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = if g.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (a - g * g.dot(&a)).normalize();
    (e1, g.cross(&e1))
}

/// Stereographic coordinates of `y` seen from `-g`; both vanish iff `y = g`.
pub fn tangent_residual(y: [f64; 3], g: [f64; 3]) -> [f64; 2] {
    let (y, g) = (v3(y), v3(g));
    let (e1, e2) = orthonormal_pair(g);
    let den = (1.0 + g.dot(&y)).max(1e-8);
    [2.0 * e1.dot(&y) / den, 2.0 * e2.dot(&y) / den]
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pattern3D {
    pub kinds: Vec<Kind3D>,
    /// Number of leading primitives that belong to the first word.
    pub split: usize,
}

impl Pattern3D {
    pub fn name(&self) -> String {
        self.kinds.iter().map(|k| k.letter()).collect()
    }

    /// Free lengths (all but the last) followed by one plane angle per C and
    /// `(tau0, tau_dot0, zeta, psi)` per H, in primitive order.
    pub fn n_unknowns(&self) -> usize {
        self.kinds.len() - 1 + self.kinds.iter().map(|k| k.extra_unknowns()).sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family3D {
    CsWords,
    HWords,
}

fn merge_straights(seq: &[Kind3D]) -> Vec<Kind3D> {
    let mut out: Vec<Kind3D> = Vec::new();
    for k in seq {
        if !(*k == Kind3D::S && out.last() == Some(&Kind3D::S)) {
            out.push(*k);
        }
    }
    out
}

/// All sequences joining two C/S words, with straight neighbours merged.
/// Adjacent arcs stay separate since they may turn in different planes.
pub fn cs_pattern_catalog() -> Vec<Pattern3D> {
    use Kind3D::*;
    let words: Vec<Vec<Kind3D>> = vec![
        vec![],
        vec![C],
        vec![S],
        vec![C, S],
        vec![S, C],
        vec![C, C],
        vec![C, S, C],
        vec![C, C, C],
    ];
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for w1 in &words {
        for w2 in &words {
            let mut joined = w1.clone();
            joined.extend(w2);
            let kinds = merge_straights(&joined);
            if kinds.is_empty() || !seen.insert(kinds.clone()) {
                continue;
            }
            let split = w1.len().min(kinds.len());
            out.push(Pattern3D { kinds, split });
        }
    }
    out.sort();
    out
}

pub fn h_pattern_catalog() -> Vec<Pattern3D> {
    vec![Pattern3D {
        kinds: vec![Kind3D::H, Kind3D::H],
        split: 1,
    }]
}

/// Primitive list for `pattern` from its unknown vector, plus the amount by
/// which the free lengths overshoot `t`.
pub fn pattern_primitives_3d(pattern: &Pattern3D, t: f64, z: &[f64]) -> Result<(Vec<Primitive3D>, f64), Dubins3dError> {
    let k = pattern.kinds.len();
    if z.len() != pattern.n_unknowns() {
        return Err(Dubins3dError::InvalidInput(format!(
            "pattern {} takes {} unknowns, got {}",
            pattern.name(),
            pattern.n_unknowns(),
            z.len()
        )));
    }
    let used: f64 = z[..k - 1].iter().sum();
    let last = t - used;
    let mut extra = z[k - 1..].iter();
    let mut next = || *extra.next().expect("unknown count checked above");
    let mut prims = Vec::with_capacity(k);
    for (i, kind) in pattern.kinds.iter().enumerate() {
        let length = if i + 1 == k { last.max(0.0) } else { z[i] };
        prims.push(match kind {
            Kind3D::C => Primitive3D::C {
                phi: next(),
                axis: [0.0; 3],
                length,
            },
            Kind3D::S => Primitive3D::S { length },
            Kind3D::H => Primitive3D::H(HParams {
                length,
                tau0: next(),
                tau_dot0: next(),
                zeta: next(),
                psi: next(),
            }),
        });
    }
    Ok((prims, (-last).max(0.0)))
}

/// Walks `prims` from the canonical frame, filling in C rotation axes.
/// Returns the end frame.
fn assemble(prims: &mut [Primitive3D]) -> Result<Frame3D, Dubins3dError> {
    let mut f = Frame3D::CANONICAL;
    for p in prims.iter_mut() {
        if let Primitive3D::C { phi, axis, .. } = p {
            let (t, n) = (v3(f.tangent), v3(f.normal));
            let d = n * phi.cos() + t.cross(&n) * phi.sin();
            *axis = arr(t.cross(&d).normalize());
        }
        f = step_3d(f, p)?;
    }
    Ok(f)
}

/// Position error, tangent error (2 components, omitted when free) and
/// length deficit. Torsion-floor violations give [`TORSION_PENALTY`] in
/// every component.
pub fn word_residual_3d(goal: &Goal3D, t: f64, pattern: &Pattern3D, z: &[f64]) -> Vec<f64> {
    let m = goal.residual_len();
    let Ok((mut prims, deficit)) = pattern_primitives_3d(pattern, t, z) else {
        return vec![f64::NAN; m];
    };
    let f = match assemble(&mut prims) {
        Ok(f) => f,
        Err(_) => return vec![TORSION_PENALTY; m],
    };
    let mut r: Vec<f64> = (0..3).map(|i| f.position[i] - goal.position[i]).collect();
    if let Some(g) = goal.tangent {
        r.extend(tangent_residual(f.tangent, g));
    }
    r.push(deficit);
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoWordPath3D {
    pub word1: Word3D,
    pub word2: Word3D,
    pub total_length: f64,
    pub goal: Goal3D,
    pub residual_norm: f64,
    pub pattern: Pattern3D,
    pub unknowns: Vec<f64>,
    pub terminal: Frame3D,
}

impl TwoWordPath3D {
    pub fn primitives(&self) -> Vec<Primitive3D> {
        self.word1.primitives.iter().chain(&self.word2.primitives).copied().collect()
    }

    /// Primitives longer than [`PRUNE_LENGTH`]; straight neighbours and arcs
    /// about the same axis are merged.
    pub fn pruned(&self) -> Vec<Primitive3D> {
        let mut out: Vec<Primitive3D> = Vec::new();
        for p in self.primitives().into_iter().filter(|p| p.length() >= PRUNE_LENGTH) {
            match (out.last_mut(), p) {
                (Some(Primitive3D::S { length: a }), Primitive3D::S { length: b }) => *a += b,
                (Some(Primitive3D::C { axis: a, length: la, .. }), Primitive3D::C { axis: b, length: lb, .. })
                    if (v3(*a) - v3(b)).amax() < 1e-9 =>
                {
                    *la += lb
                }
                _ => out.push(p),
            }
        }
        out
    }

    /// Pruned structure, e.g. `CSCCC` or `HH`.
    pub fn structure(&self) -> String {
        self.pruned().iter().map(|p| p.kind().letter()).collect()
    }

    pub fn family(&self) -> Family3D {
        if self.pattern.kinds.contains(&Kind3D::H) {
            Family3D::HWords
        } else {
            Family3D::CsWords
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dubins3dOptions {
    pub starts_per_pattern: usize,
    pub seed: u64,
    pub residual_tol: f64,
    pub max_iters: usize,
    pub families: Vec<Family3D>,
    /// Keep `zeta >= 0` on H arcs.
    pub zeta_nonnegative: bool,
    /// With a free goal tangent: solve first with this tangent fixed, then
    /// release it from the converged point.
    pub tangent_seed: Option<[f64; 3]>,
}

impl Default for Dubins3dOptions {
    fn default() -> Self {
        Self {
            starts_per_pattern: 8,
            seed: 0,
            residual_tol: 1e-9,
            max_iters: 300,
            families: vec![Family3D::CsWords, Family3D::HWords],
            zeta_nonnegative: false,
            tangent_seed: None,
        }
    }
}

pub fn solve_dubins3d(goal: &Goal3D, t: f64, families: &[Family3D], starts_per_pattern: usize) -> Result<Vec<TwoWordPath3D>, Dubins3dError> {
    solve_dubins3d_with(
        goal,
        t,
        &Dubins3dOptions {
            starts_per_pattern,
            families: families.to_vec(),
            ..Dubins3dOptions::default()
        },
    )
}

fn bounds(pattern: &Pattern3D, t: f64, zeta_nonnegative: bool) -> (Vec<f64>, Vec<f64>) {
    let k = pattern.kinds.len();
    let mut lo = vec![0.0; k - 1];
    let mut hi = vec![t; k - 1];
    for kind in &pattern.kinds {
        match kind {
            Kind3D::C => {
                lo.push(-4.0 * PI);
                hi.push(4.0 * PI);
            }
            Kind3D::S => {}
            Kind3D::H => {
                let zlo = if zeta_nonnegative { 0.0 } else { -10.0 };
                lo.extend([-5.0, -5.0, zlo, -4.0 * PI]);
                hi.extend([5.0, 5.0, 10.0, 4.0 * PI]);
            }
        }
    }
    (lo, hi)
}

fn random_start(rng: &mut ChaCha8Rng, pattern: &Pattern3D, t: f64, zeta_nonnegative: bool) -> Vec<f64> {
    let k = pattern.kinds.len();
    let w: Vec<f64> = (0..k).map(|_| -rng.gen_range(1e-12f64..1.0).ln()).collect();
    let sum: f64 = w.iter().sum();
    let mut z: Vec<f64> = w[..k - 1].iter().map(|x| t * x / sum).collect();
    for kind in &pattern.kinds {
        match kind {
            Kind3D::C => z.push(rng.gen_range(0.0..2.0 * PI)),
            Kind3D::S => {}
            Kind3D::H => {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                z.push(sign * rng.gen_range(0.3..1.5));
                z.push(rng.gen_range(-0.5..0.5));
                let zeta = rng.gen_range(0.0..2.0);
                z.push(if zeta_nonnegative { zeta } else { zeta - 0.5 });
                z.push(rng.gen_range(0.0..2.0 * PI));
            }
        }
    }
    z
}

/// Builds the path for a converged unknown vector.
pub fn make_path_3d(goal: &Goal3D, t: f64, pattern: &Pattern3D, z: &[f64], residual_norm: f64) -> Result<TwoWordPath3D, Dubins3dError> {
    let (mut prims, _) = pattern_primitives_3d(pattern, t, z)?;
    let terminal = assemble(&mut prims)?;
    let (a, b) = prims.split_at(pattern.split.min(prims.len()));
    Ok(TwoWordPath3D {
        word1: Word3D { primitives: a.to_vec() },
        word2: Word3D { primitives: b.to_vec() },
        total_length: prims.iter().map(|p| p.length()).sum(),
        goal: *goal,
        residual_norm,
        pattern: pattern.clone(),
        unknowns: z.to_vec(),
        terminal,
    })
}

fn lm_solve(goal: &Goal3D, t: f64, pattern: &Pattern3D, x0: Vec<f64>, opts: &Dubins3dOptions) -> Option<(Vec<f64>, f64)> {
    let residual = |z: &[f64]| word_residual_3d(goal, t, pattern, z);
    let (lo, hi) = bounds(pattern, t, opts.zeta_nonnegative);
    let x0: Vec<f64> = x0.iter().zip(lo.iter().zip(&hi)).map(|(x, (l, h))| x.clamp(*l, *h)).collect();
    let problem = RootProblem::new(&residual, x0)
        .with_bounds(lo, hi)
        .with_residual_tol(opts.residual_tol)
        .with_max_iters(opts.max_iters);
    let r = solve_lm(&problem).ok()?;
    r.converged.then_some((r.x, r.residual_norm))
}

/// Solves for two-word paths of length `t` from the canonical frame to
/// `goal`. Underdetermined systems accept any root.
pub fn solve_dubins3d_with(goal: &Goal3D, t: f64, opts: &Dubins3dOptions) -> Result<Vec<TwoWordPath3D>, Dubins3dError> {
    goal.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Dubins3dError::InvalidInput(format!("length must be finite and >= 0, got {t}")));
    }
    if opts.starts_per_pattern == 0 {
        return Err(Dubins3dError::InvalidInput("starts_per_pattern must be >= 1".into()));
    }
    let seeded = match (goal.tangent, opts.tangent_seed) {
        (None, Some(s)) => Some(Goal3D::new(goal.position, Some(s))),
        _ => None,
    };
    let mut patterns = Vec::new();
    if opts.families.contains(&Family3D::CsWords) {
        patterns.extend(cs_pattern_catalog());
    }
    if opts.families.contains(&Family3D::HWords) {
        patterns.extend(h_pattern_catalog());
    }
    let jobs: Vec<(usize, usize)> = (0..patterns.len())
        .flat_map(|pi| (0..opts.starts_per_pattern).map(move |s| (pi, s)))
        .collect();
    let mut found: Vec<TwoWordPath3D> = jobs
        .par_iter()
        .filter_map(|&(pi, s)| {
            let pattern = &patterns[pi];
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream((pi * 1_000_003 + s) as u64);
            let mut x0 = random_start(&mut rng, pattern, t, opts.zeta_nonnegative);
            if let Some(g) = &seeded {
                x0 = lm_solve(g, t, pattern, x0, opts)?.0;
            }
            let (z, norm) = lm_solve(goal, t, pattern, x0, opts)?;
            make_path_3d(goal, t, pattern, &z, norm).ok()
        })
        .collect();
    found.sort_by(|a, b| a.residual_norm.total_cmp(&b.residual_norm).then_with(|| a.pattern.cmp(&b.pattern)));
    let mut kept: Vec<TwoWordPath3D> = Vec::new();
    for p in found {
        let dup = kept.iter().any(|q| {
            q.pattern == p.pattern && q.unknowns.iter().zip(&p.unknowns).all(|(a, b)| (a - b).abs() < 1e-6)
        });
        if !dup {
            kept.push(p);
        }
    }
    Ok(kept)
}

/// Arclength-equispaced samples of a 3D path.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath3D {
    /// States are `(position, tangent)`; controls are the input `u` with
    /// `tangent' = tangent x u`.
    pub trajectory: Trajectory,
    /// Largest curvature estimated from second differences of positions.
    pub max_curvature: f64,
}

pub fn sample_path_3d(path: &TwoWordPath3D, n: usize) -> Result<SampledPath3D, Dubins3dError> {
    if n < 2 {
        return Err(Dubins3dError::InvalidInput("need at least 2 samples".into()));
    }
    let prims = path.primitives();
    let total: f64 = prims.iter().map(|p| p.length()).sum();
    let targets: Vec<f64> = (0..n).map(|i| total * i as f64 / (n - 1) as f64).collect();
    let mut traj = Trajectory::default();
    let mut push = |s: f64, f: &Frame3D, u: Vector3<f64>| {
        let t = v3(f.tangent).normalize();
        traj.times.push(s);
        traj.states.push(vec![f.position[0], f.position[1], f.position[2], t.x, t.y, t.z]);
        traj.costates.push(Vec::new());
        traj.controls.push(vec![u.x, u.y, u.z]);
    };
    let mut frame = Frame3D::CANONICAL;
    let mut s0 = 0.0;
    let mut next = 0;
    for (pi, p) in prims.iter().enumerate() {
        let len = p.length();
        let last = pi + 1 == prims.len();
        let in_prim = |s: f64| s <= s0 + len || last;
        match p {
            Primitive3D::C { phi, .. } => {
                let (t, nn) = (v3(frame.tangent), v3(frame.normal));
                let d = nn * phi.cos() + t.cross(&nn) * phi.sin();
                let u = d.cross(&t);
                while next < n && in_prim(targets[next]) {
                    let f = endpoint_c_arc(frame, *phi, (targets[next] - s0).min(len));
                    push(targets[next], &f, u);
                    next += 1;
                }
                frame = endpoint_c_arc(frame, *phi, len);
            }
            Primitive3D::S { .. } => {
                while next < n && in_prim(targets[next]) {
                    push(targets[next], &endpoint_s(frame, (targets[next] - s0).min(len)), Vector3::zeros());
                    next += 1;
                }
                frame = endpoint_s(frame, len);
            }
            Primitive3D::H(h) => {
                let mut v = h_state(&rotate_normal(frame, h.psi), h.tau0, h.tau_dot0);
                let mut at = 0.0;
                while next < n && in_prim(targets[next]) {
                    let ds = ((targets[next] - s0).min(len) - at).max(0.0);
                    if ds > 0.0 {
                        v = integrate_h_state(v, h.zeta, ds, H_ARC_TOL)?.0;
                        at += ds;
                    }
                    let f = h_frame(&v);
                    let u = v3(f.normal).cross(&v3(f.tangent));
                    push(targets[next], &f, u);
                    next += 1;
                }
                frame = integrate_h_arc(frame, *h)?.frame;
            }
        }
        s0 += len;
    }
    let h = total / (n - 1) as f64;
    let max_curvature = if h > 0.0 {
        traj.states
            .windows(3)
            .map(|w| {
                let a = v3([w[0][0], w[0][1], w[0][2]]);
                let b = v3([w[1][0], w[1][1], w[1][2]]);
                let c = v3([w[2][0], w[2][1], w[2][2]]);
                (a - 2.0 * b + c).norm() / (h * h)
            })
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(SampledPath3D { trajectory: traj, max_curvature })
}
