//! Sampled reachable sets, en-route sets and Hausdorff distances for
//! brute-force checks of the steering solvers.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dubins2d::{is_word, pattern_catalog_2d, step_2d, word_residual_2d, Config2D, Kind2D, Primitive2D};
use crate::numerics::{integrate_adaptive, OdeProblem};
use crate::p2::{Direction, ExtremalField};
use crate::rootfind::{solve_lm, RootProblem};
use crate::vdp::VdpField;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ReachError {
    #[error("invalid reach input: {0}")]
    InvalidInput(String),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("propagation failed: {0}")]
    Propagation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReachSystem {
    Vdp,
    Dubins2d,
    Dubins3d,
}

impl ReachSystem {
    pub fn state_dim(self) -> usize {
        match self {
            ReachSystem::Vdp => 2,
            ReachSystem::Dubins2d => 3,
            ReachSystem::Dubins3d => 6,
        }
    }

    pub fn control_dim(self) -> usize {
        match self {
            ReachSystem::Dubins3d => 3,
            _ => 1,
        }
    }

    /// State coordinates that are angles, compared modulo `2 pi`.
    pub fn periodic_dims(self) -> Vec<usize> {
        match self {
            ReachSystem::Dubins2d => vec![2],
            _ => vec![],
        }
    }

    /// Extreme point of the control set: `+-1`, or a uniform unit vector.
    fn draw_value(self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            ReachSystem::Dubins3d => {
                let z: f64 = rng.gen_range(-1.0..1.0);
                let a: f64 = rng.gen_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).sqrt();
                vec![r * a.cos(), r * a.sin(), z]
            }
            _ => vec![if rng.gen_bool(0.5) { 1.0 } else { -1.0 }],
        }
    }

    /// `|f(x, u)|` in the state space.
    pub fn speed(self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            ReachSystem::Vdp => {
                let mut dx = [0.0; 2];
                VdpField.dynamics(x, u, &mut dx);
                dx[0].hypot(dx[1])
            }
            ReachSystem::Dubins2d => 1f64.hypot(u[0]),
            ReachSystem::Dubins3d => {
                let (y, u) = ([x[3], x[4], x[5]], [u[0], u[1], u[2]]);
                let c = cross(y, u);
                (dot(y, y) + dot(c, c)).sqrt()
            }
        }
    }

    /// Largest `|f(x, u)|` over the extreme points of the control set.
    pub fn max_speed(self, x: &[f64]) -> f64 {
        match self {
            ReachSystem::Vdp => self.speed(x, &[1.0]).max(self.speed(x, &[-1.0])),
            ReachSystem::Dubins2d => 2f64.sqrt(),
            ReachSystem::Dubins3d => {
                let y2 = x[3] * x[3] + x[4] * x[4] + x[5] * x[5];
                (2.0 * y2).sqrt()
            }
        }
    }

    /// Flow of `sign * f` with constant control `u` for time `dt >= 0`.
    pub fn flow(self, x: &[f64], u: &[f64], dt: f64, direction: Direction) -> Result<Vec<f64>, ReachError> {
        let s = match direction {
            Direction::Forward => dt,
            Direction::Backward => -dt,
        };
        match self {
            ReachSystem::Dubins2d => {
                let kind = if u[0] > 0.0 {
                    Kind2D::L
                } else if u[0] < 0.0 {
                    Kind2D::R
                } else {
                    Kind2D::S
                };
                let c = step_2d(Config2D::new(x[0], x[1], x[2]), Primitive2D::new(kind, s));
                Ok(vec![c.x, c.y, c.gamma])
            }
            ReachSystem::Dubins3d => Ok(flow_3d(x, [u[0], u[1], u[2]], s)),
            ReachSystem::Vdp => {
                let sign = s.signum();
                let u = u[0];
                let ode = OdeProblem::new(
                    move |_t: f64, v: &[f64], o: &mut [f64]| {
                        VdpField.dynamics(v, &[u], o);
                        o[0] *= sign;
                        o[1] *= sign;
                    },
                    0.0,
                    dt,
                    x.to_vec(),
                )
                .with_tolerances(1e-10, 1e-10);
                let r = integrate_adaptive(&ode).map_err(|e| ReachError::Propagation(e.to_string()))?;
                if !r.converged() {
                    return Err(ReachError::Propagation("VdP step did not reach the horizon".into()));
                }
                Ok(r.final_state().to_vec())
            }
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `x' = y`, `y' = y x u` with constant `u` in closed form: `y` rotates
/// about `-u` at rate `|u|`.
fn flow_3d(x: &[f64], u: [f64; 3], s: f64) -> Vec<f64> {
    let y0 = [x[3], x[4], x[5]];
    let w = dot(u, u).sqrt();
    if w == 0.0 {
        return vec![x[0] + s * y0[0], x[1] + s * y0[1], x[2] + s * y0[2], y0[0], y0[1], y0[2]];
    }
    let k = [-u[0] / w, -u[1] / w, -u[2] / w];
    let along = dot(k, y0);
    let a: [f64; 3] = std::array::from_fn(|i| along * k[i]);
    let b: [f64; 3] = std::array::from_fn(|i| y0[i] - a[i]);
    let c = cross(k, y0);
    let (sn, cs) = ((w * s).sin(), (w * s).cos());
    let mut out = Vec::with_capacity(6);
    for i in 0..3 {
        out.push(x[i] + a[i] * s + b[i] * sn / w + c[i] * (1.0 - cs) / w);
    }
    for i in 0..3 {
        out.push(a[i] + b[i] * cs + c[i] * sn);
    }
    out
}

/// Piecewise-constant control: `values[k]` holds on the k-th interval cut
/// by `switch_times`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub switch_times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ControlSample {
    pub fn constant(value: Vec<f64>) -> Self {
        Self {
            switch_times: Vec::new(),
            values: vec![value],
        }
    }

    /// Uniform switch count in `0..=max_switches`, uniform switch times in
    /// `[0, horizon]`, extreme-point values.
    pub fn draw(system: ReachSystem, rng: &mut ChaCha8Rng, horizon: f64, max_switches: usize) -> Self {
        let k = rng.gen_range(0..=max_switches);
        let mut switch_times: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * horizon).collect();
        switch_times.sort_by(f64::total_cmp);
        let values = (0..=k).map(|_| system.draw_value(rng)).collect();
        Self { switch_times, values }
    }
}

/// State after applying `control` for time `t` from `origin`.
pub fn integrate_control(
    system: ReachSystem,
    direction: Direction,
    origin: &[f64],
    control: &ControlSample,
    t: f64,
) -> Result<Vec<f64>, ReachError> {
    if control.values.len() != control.switch_times.len() + 1 {
        return Err(ReachError::InvalidInput("control needs one more value than switch times".into()));
    }
    let mut x = origin.to_vec();
    let mut prev = 0.0;
    for (k, u) in control.values.iter().enumerate() {
        let end = control.switch_times.get(k).copied().unwrap_or(f64::INFINITY).min(t);
        if end > prev {
            x = system.flow(&x, u, end - prev, direction)?;
            prev = end;
        }
        if prev >= t {
            break;
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudMeta {
    pub system: Option<ReachSystem>,
    pub direction: String,
    pub horizon: f64,
    pub requested: usize,
    pub dropped: usize,
    pub max_switches: usize,
    pub seed: u64,
    /// Largest `|f|` seen on the sampled states and controls; for en-route
    /// clouds, the largest `max_u |f(x, u)|` over the kept points.
    pub speed_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec<f64>>,
    pub meta: CloudMeta,
}

impl PointCloud {
    /// Cloud without generator information, compared with the plain
    /// Euclidean metric.
    pub fn from_points(points: Vec<Vec<f64>>) -> Self {
        Self {
            points,
            meta: CloudMeta {
                system: None,
                direction: "none".into(),
                horizon: 0.0,
                requested: 0,
                dropped: 0,
                max_switches: 0,
                seed: 0,
                speed_bound: 0.0,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn periodic(&self) -> Vec<usize> {
        self.meta.system.map(|s| s.periodic_dims()).unwrap_or_default()
    }

    /// One point per row with a header `c0,c1,...`.
    pub fn to_csv(&self) -> String {
        let dim = self.points.first().map_or(0, |p| p.len());
        let mut out = (0..dim).map(|i| format!("c{i}")).collect::<Vec<_>>().join(",");
        out.push('\n');
        for p in &self.points {
            let row: Vec<String> = p.iter().map(|v| format!("{v:.17e}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Backward => "backward",
    }
}

/// Per-draw stream so results do not depend on the worker count.
fn draw_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Cloud at time `t` using controls drawn on `[0, horizon]` and truncated.
/// Sharing `horizon` and `seed` across times gives common random controls.
#[allow(clippy::too_many_arguments)]
fn sample_truncated(
    system: ReachSystem,
    direction: Direction,
    origin: &[f64],
    t: f64,
    horizon: f64,
    n: usize,
    max_switches: usize,
    seed: u64,
) -> PointCloud {
    let draws: Vec<Option<(Vec<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = draw_rng(seed, i);
            let c = ControlSample::draw(system, &mut rng, horizon, max_switches);
            let x = integrate_control(system, direction, origin, &c, t).ok()?;
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
            let speed = c.values.iter().map(|u| system.speed(&x, u)).fold(0.0, f64::max);
            Some((x, speed))
        })
        .collect();
    let dropped = draws.iter().filter(|d| d.is_none()).count();
    let speed_bound = draws.iter().flatten().map(|d| d.1).fold(0.0, f64::max);
    PointCloud {
        points: draws.into_iter().flatten().map(|d| d.0).collect(),
        meta: CloudMeta {
            system: Some(system),
            direction: direction_name(direction).into(),
            horizon: t,
            requested: n,
            dropped,
            max_switches,
            seed,
            speed_bound,
        },
    }
}

/// Endpoints at time `t` of `n` random bang-bang controls.
pub fn sample_reachable(
    system: ReachSystem,
    direction: Direction,
    origin: &[f64],
    t: f64,
    n: usize,
    max_switches: usize,
    seed: u64,
) -> Result<PointCloud, ReachError> {
    if n == 0 {
        return Err(ReachError::InvalidInput("n_samples must be >= 1".into()));
    }
    if origin.len() != system.state_dim() {
        return Err(ReachError::InvalidInput(format!(
            "origin has {} components, system needs {}",
            origin.len(),
            system.state_dim()
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(ReachError::InvalidInput(format!("t must be finite and >= 0, got {t}")));
    }
    Ok(sample_truncated(system, direction, origin, t, t, n, max_switches, seed))
}

/// `b - a`, with periodic coordinates wrapped into `[-pi, pi]`.
fn offset(a: &[f64], b: &[f64], periodic: &[usize]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let d = y - x;
            if periodic.contains(&i) {
                d - 2.0 * PI * (d / (2.0 * PI)).round()
            } else {
                d
            }
        })
        .collect()
}

fn point_dist(a: &[f64], b: &[f64], periodic: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let mut d = y - x;
        if periodic.contains(&i) {
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
        }
        sum += d * d;
    }
    sum.sqrt()
}

/// Points sorted by their first coordinate for exact nearest-neighbour
/// sweeps. The first coordinate is never periodic.
struct SweepIndex<'a> {
    points: &'a [Vec<f64>],
    order: Vec<usize>,
    keys: Vec<f64>,
    periodic: &'a [usize],
}

impl<'a> SweepIndex<'a> {
    fn new(points: &'a [Vec<f64>], periodic: &'a [usize]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| points[i][0].total_cmp(&points[j][0]).then(i.cmp(&j)));
        let keys = order.iter().map(|&i| points[i][0]).collect();
        Self { points, order, keys, periodic }
    }

    /// Distance from `p` to the nearest indexed point.
    fn nearest(&self, p: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        let start = self.keys.partition_point(|k| *k < p[0]);
        let visit = |k: usize, best: &mut f64| {
            let d = point_dist(p, &self.points[self.order[k]], self.periodic);
            if d < *best {
                *best = d;
            }
        };
        for k in start..self.keys.len() {
            if self.keys[k] - p[0] > best {
                break;
            }
            visit(k, &mut best);
        }
        for k in (0..start).rev() {
            if p[0] - self.keys[k] > best {
                break;
            }
            visit(k, &mut best);
        }
        best
    }
}

impl SweepIndex<'_> {
    /// The `k` nearest indexed points within `cutoff` as `(distance, index)`,
    /// closest first.
    fn k_nearest(&self, p: &[f64], k: usize, cutoff: f64) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let worst = |best: &Vec<(f64, usize)>| if best.len() < k { cutoff } else { best[k - 1].0.min(cutoff) };
        let visit = |j: usize, best: &mut Vec<(f64, usize)>| {
            let i = self.order[j];
            let d = point_dist(p, &self.points[i], self.periodic);
            if d <= worst(best) {
                let at = best.partition_point(|e| e.0 <= d);
                best.insert(at, (d, i));
                best.truncate(k);
            }
        };
        let start = self.keys.partition_point(|key| *key < p[0]);
        for j in start..self.keys.len() {
            if self.keys[j] - p[0] > worst(&best) {
                break;
            }
            visit(j, &mut best);
        }
        for j in (0..start).rev() {
            if p[0] - self.keys[j] > worst(&best) {
                break;
            }
            visit(j, &mut best);
        }
        best
    }
}

/// Distance from each point of `a` to the nearest point of `b`.
fn nearest_distances(a: &[Vec<f64>], b: &[Vec<f64>], periodic: &[usize]) -> Vec<f64> {
    let index = SweepIndex::new(b, periodic);
    a.par_iter().map(|p| index.nearest(p)).collect()
}

fn directed_hausdorff(a: &[Vec<f64>], b: &[Vec<f64>], periodic: &[usize]) -> f64 {
    nearest_distances(a, b, periodic).into_iter().fold(0.0, f64::max)
}

/// Exact symmetric Hausdorff distance. Angles of the generating system are
/// compared modulo `2 pi`.
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64, ReachError> {
    if a.is_empty() || b.is_empty() {
        return Err(ReachError::EmptyCloud);
    }
    let mut periodic = a.periodic();
    periodic.retain(|i| b.periodic().contains(i));
    Ok(directed_hausdorff(&a.points, &b.points, &periodic).max(directed_hausdorff(&b.points, &a.points, &periodic)))
}

/// Endpoint pair and horizon of a steering problem for cloud sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringSpec {
    pub system: ReachSystem,
    pub chi_i: Vec<f64>,
    pub chi_f: Vec<f64>,
    pub t_final: f64,
    pub max_switches: usize,
    pub seed: u64,
}

impl SteeringSpec {
    fn validate(&self) -> Result<(), ReachError> {
        let n = self.system.state_dim();
        if self.chi_i.len() != n || self.chi_f.len() != n {
            return Err(ReachError::InvalidInput(format!("endpoints must have {n} components")));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(ReachError::InvalidInput("t_final must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrouteCloud {
    pub cloud: PointCloud,
    pub delta: f64,
    pub forward_size: usize,
    pub backward_size: usize,
}

/// Backward neighbours examined around each forward sample.
pub const ENROUTE_NEIGHBOURS: usize = 16;

/// A forward sample counts as surrounded by the backward cloud when the
/// centroid of its neighbours is within this fraction of their mean
/// distance.
pub const ENROUTE_BALANCE: f64 = 0.15;

/// Percentile of the neighbour radius used as the default `delta`.
pub const ENROUTE_PERCENTILE: f64 = 5.0;

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q / 100.0).round() as usize]
}

/// Whether the `k` nearest backward points all lie within `radius` of `p`
/// and surround it.
fn surrounded(index: &SweepIndex, p: &[f64], k: usize, radius: f64) -> bool {
    let nn = index.k_nearest(p, k, radius);
    if nn.len() < k {
        return false;
    }
    let m = nn.len() as f64;
    let mean = nn.iter().map(|e| e.0).sum::<f64>() / m;
    let mut centroid = vec![0.0; p.len()];
    for (_, i) in &nn {
        for (c, d) in centroid.iter_mut().zip(offset(p, &index.points[*i], index.periodic)) {
            *c += d / m;
        }
    }
    let shift = centroid.iter().map(|c| c * c).sum::<f64>().sqrt();
    shift <= ENROUTE_BALANCE * mean
}

/// Forward samples used to pick the default matching radius.
const RADIUS_PROBES: usize = 2000;

/// Sampled en-route set at time `t`: forward-cloud points (time `t` from
/// `chi_i`) surrounded by the backward cloud (time `T - t` from `chi_f`)
/// within radius `delta`. "Surrounded" means the [`ENROUTE_NEIGHBOURS`]
/// nearest backward points are within `delta` and their centroid sits close
/// to the point, which rejects forward points just outside the backward set.
/// The default `delta` is the [`ENROUTE_PERCENTILE`]th percentile of the
/// distance to the last of those neighbours over an even subsample of the
/// forward cloud.
pub fn enroute_cloud(spec: &SteeringSpec, t: f64, n: usize, delta: Option<f64>) -> Result<EnrouteCloud, ReachError> {
    spec.validate()?;
    if !(0.0..=spec.t_final).contains(&t) {
        return Err(ReachError::InvalidInput(format!("t = {t} outside [0, {}]", spec.t_final)));
    }
    if n == 0 {
        return Err(ReachError::InvalidInput("n must be >= 1".into()));
    }
    let big_t = spec.t_final;
    let fwd = sample_truncated(spec.system, Direction::Forward, &spec.chi_i, t, big_t, n, spec.max_switches, spec.seed);
    let bwd = sample_truncated(
        spec.system,
        Direction::Backward,
        &spec.chi_f,
        big_t - t,
        big_t,
        n,
        spec.max_switches,
        spec.seed ^ 0x9e37_79b9_7f4a_7c15,
    );
    let periodic = spec.system.periodic_dims();
    let index = SweepIndex::new(&bwd.points, &periodic);
    let k = ENROUTE_NEIGHBOURS.min(bwd.len());
    let delta = delta.unwrap_or_else(|| {
        let stride = fwd.len().div_ceil(RADIUS_PROBES).max(1);
        let radii: Vec<f64> = fwd
            .points
            .par_iter()
            .step_by(stride)
            .map(|p| index.k_nearest(p, k, f64::INFINITY).last().map_or(f64::INFINITY, |e| e.0))
            .collect();
        percentile(&radii, ENROUTE_PERCENTILE)
    });
    // At t = T the backward cloud is the single state chi_f and only the
    // radius applies.
    let single = bwd.points.windows(2).all(|w| w[0] == w[1]);
    let keep: Vec<bool> = fwd
        .points
        .par_iter()
        .map(|p| match bwd.points.first() {
            None => false,
            Some(q) if single => point_dist(p, q, &periodic) <= delta,
            Some(_) => surrounded(&index, p, k, delta),
        })
        .collect();
    let points: Vec<Vec<f64>> = fwd.points.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p.clone()).collect();
    let mut meta = fwd.meta.clone();
    meta.direction = "enroute".into();
    // Speeds at the en-route points themselves; far-away samples of either
    // cloud (e.g. backward VdP blow-ups) say nothing about the tube.
    meta.speed_bound = points.iter().map(|p| spec.system.max_speed(p)).fold(0.0, f64::max);
    meta.dropped += bwd.meta.dropped;
    Ok(EnrouteCloud {
        forward_size: fwd.len(),
        backward_size: bwd.len(),
        cloud: PointCloud { points, meta },
        delta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRecord {
    pub t0: f64,
    pub t1: f64,
    /// `None` when either en-route cloud is empty.
    pub hausdorff: Option<f64>,
    /// `m |t1 - t0| + delta0 + delta1`.
    pub bound: f64,
    pub holds: bool,
}

/// Hausdorff distance between en-route clouds at consecutive `times`,
/// sampled with common random controls, against `m dt + 2 delta`.
pub fn continuity_probe(spec: &SteeringSpec, times: &[f64], n: usize) -> Result<Vec<ContinuityRecord>, ReachError> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(ReachError::InvalidInput("times must be sorted".into()));
    }
    let clouds = times
        .iter()
        .map(|t| enroute_cloud(spec, *t, n, None))
        .collect::<Result<Vec<_>, _>>()?;
    let m = clouds.iter().map(|c| c.cloud.meta.speed_bound).fold(0.0, f64::max);
    Ok(times
        .windows(2)
        .zip(clouds.windows(2))
        .map(|(t, c)| {
            let h = hausdorff(&c[0].cloud, &c[1].cloud).ok();
            let bound = m * (t[1] - t[0]) + c[0].delta + c[1].delta;
            ContinuityRecord {
                t0: t[0],
                t1: t[1],
                hausdorff: h,
                bound,
                holds: h.is_none_or(|h| h <= bound),
            }
        })
        .collect())
}

/// Fit of a single word of length `t` from the origin to `goal`; returns the
/// smallest residual norm over all single-word patterns.
pub fn fit_single_word_2d(goal: Config2D, t: f64, starts: usize, seed: u64) -> f64 {
    let patterns: Vec<_> = pattern_catalog_2d()
        .into_iter()
        .filter(|p| p.kinds.len() <= 3 && is_word(&p.kinds))
        .map(|mut p| {
            p.split = p.kinds.len();
            p
        })
        .collect();
    patterns
        .par_iter()
        .enumerate()
        .map(|(pi, p)| {
            let k = p.kinds.len();
            let residual = |z: &[f64]| word_residual_2d(goal, t, p, z).to_vec();
            let mut best = f64::INFINITY;
            for s in 0..if k == 1 { 1 } else { starts } {
                let mut rng = draw_rng(seed, pi * 1_000_003 + s);
                let x0: Vec<f64> = (0..k - 1).map(|_| rng.gen::<f64>() * t / k as f64).collect();
                let problem = RootProblem::new(&residual, x0)
                    .with_bounds(vec![0.0; k - 1], vec![t; k - 1])
                    .with_residual_tol(1e-12);
                if let Ok(r) = solve_lm(&problem) {
                    best = best.min(r.residual_norm);
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub t: f64,
    pub cloud_size: usize,
    pub probed: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl BoundaryReport {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.residuals.is_empty() {
            return 1.0;
        }
        self.residuals.iter().filter(|r| **r <= tol).count() as f64 / self.residuals.len() as f64
    }
}

/// Dubins 2D cloud at `t`; its convex-hull extremes in the `(x, y, gamma)`
/// chart along `n_probes` directions are each fitted by one word.
pub fn boundary_coverage_check(t: f64, n_cloud: usize, n_probes: usize, seed: u64) -> Result<BoundaryReport, ReachError> {
    let cloud = sample_reachable(ReachSystem::Dubins2d, Direction::Forward, &[0.0; 3], t, n_cloud, 4, seed)?;
    // Fibonacci directions on the sphere.
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut idx: Vec<usize> = (0..n_probes)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n_probes as f64;
            let r = (1.0 - z * z).sqrt();
            let d = [r * (golden * k as f64).cos(), r * (golden * k as f64).sin(), z];
            (0..cloud.len())
                .max_by(|&i, &j| {
                    let pi = &cloud.points[i];
                    let pj = &cloud.points[j];
                    (d[0] * pi[0] + d[1] * pi[1] + d[2] * pi[2]).total_cmp(&(d[0] * pj[0] + d[1] * pj[1] + d[2] * pj[2]))
                })
                .expect("cloud is non-empty")
        })
        .collect();
    idx.sort_unstable();
    idx.dedup();
    let probed: Vec<Vec<f64>> = idx.iter().map(|i| cloud.points[*i].clone()).collect();
    let residuals = probed
        .iter()
        .enumerate()
        .map(|(i, p)| fit_single_word_2d(Config2D::new(p[0], p[1], p[2]), t, 8, seed.wrapping_add(i as u64)))
        .collect();
    Ok(BoundaryReport {
        t,
        cloud_size: cloud.len(),
        probed,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn left_quarter_turn() {
        let c = ControlSample::constant(vec![1.0]);
        let x = integrate_control(ReachSystem::Dubins2d, Direction::Forward, &[0.0; 3], &c, PI / 2.0).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15 && (x[2] - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_horizon_stays_at_origin() {
        let c = sample_reachable(ReachSystem::Vdp, Direction::Forward, &[2.0, 2.0], 0.0, 10, 3, 1).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.points.iter().all(|p| p == &vec![2.0, 2.0]));
    }

    #[test]
    fn single_pair_hausdorff() {
        let a = PointCloud::from_points(vec![vec![0.0, 0.0]]);
        let b = PointCloud::from_points(vec![vec![3.0, 4.0]]);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &PointCloud::from_points(vec![])), Err(ReachError::EmptyCloud));
    }

    #[test]
    fn backward_undoes_forward() {
        let c = ControlSample {
            switch_times: vec![0.4, 1.1],
            values: vec![vec![0.0, 0.6, 0.8], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, -1.0]],
        };
        let x0 = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let x1 = integrate_control(ReachSystem::Dubins3d, Direction::Forward, &x0, &c, 2.0).unwrap();
        // Reverse order of pieces for the backward flow.
        let back = ControlSample {
            switch_times: vec![0.9, 1.6],
            values: vec![vec![0.0, 0.0, -1.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]],
        };
        let x2 = integrate_control(ReachSystem::Dubins3d, Direction::Backward, &x1, &back, 2.0).unwrap();
        assert!(x2.iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-12), "{x2:?}");
    }
}
