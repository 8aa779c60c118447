//! Solver dispatch and the records written to `summary.json`.

use serde::{Deserialize, Serialize};
use steering::dubins2d::{
    sample_path_2d, solve_dubins2d_with, step_2d, Config2D, Dubins2dOptions, Kind2D, Primitive2D, TwoWordPath2D,
};
use steering::dubins3d::{sample_path_3d, solve_dubins3d_with, Dubins3dOptions, Family3D, Goal3D, Primitive3D};
use steering::p2::{solve_p2_with, P2Options, P2Problem, P2Solution};
use steering::vdp::{vdp_field, VdpField};

use crate::spec::{Family, ProblemSpec, System};

/// Samples per trajectory CSV.
pub const TRAJECTORY_SAMPLES: usize = 1001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub index: usize,
    pub residual_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterations: Option<usize>,
    pub trajectory: String,
    #[serde(flatten)]
    pub detail: Detail,
}

/// Words are expressed in the frame of `chi_i`; terminal states in world
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Detail {
    Extremals {
        tau: f64,
        concat_time: f64,
        freed_values: Vec<f64>,
        p1_0: Vec<f64>,
        p2_0: Vec<f64>,
        z: Vec<f64>,
        terminal_state: Vec<f64>,
    },
    Dubins2d {
        structure: String,
        directed_structure: String,
        pattern: String,
        total_length: f64,
        word1: Vec<Primitive2D>,
        word2: Vec<Primitive2D>,
        terminal_state: Vec<f64>,
    },
    Dubins3d {
        family: Family,
        structure: String,
        pattern: String,
        total_length: f64,
        unknowns: Vec<f64>,
        word1: Vec<Primitive3D>,
        word2: Vec<Primitive3D>,
        terminal_state: Vec<f64>,
        freed_values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solved {
    pub record: SolutionRecord,
    pub csv: String,
    /// `(x, y)` polyline for the 2D plot.
    pub polyline: Option<Vec<[f64; 2]>>,
}

pub fn vdp_from_spec(spec: &ProblemSpec) -> Result<P2Problem<VdpField>, String> {
    P2Problem::new(vdp_field(), spec.chi_i.clone(), spec.chi_f.clone(), spec.t_final).map_err(|e| e.to_string())
}

pub fn p2_options(spec: &ProblemSpec) -> P2Options {
    P2Options {
        starts: spec.solver.starts,
        seed: spec.solver.seed,
        residual_tol: spec.solver.residual_tol,
        tau_seed: spec.solver.tau_seed,
        freed_seed: spec.solver.freed_seed.clone(),
        samples: TRAJECTORY_SAMPLES,
        ..P2Options::default()
    }
}

/// Rigid map between the frame of a 2D start configuration and the world.
#[derive(Clone, Copy, Debug)]
pub struct Frame2 {
    origin: Config2D,
}

impl Frame2 {
    pub fn new(chi_i: &[f64]) -> Self {
        Self {
            origin: Config2D::new(chi_i[0], chi_i[1], chi_i[2]),
        }
    }

    pub fn to_local(self, w: Config2D) -> Config2D {
        let o = self.origin;
        let (c, s) = (o.gamma.cos(), o.gamma.sin());
        let (dx, dy) = (w.x - o.x, w.y - o.y);
        Config2D::new(c * dx + s * dy, -s * dx + c * dy, w.gamma - o.gamma)
    }

    pub fn to_world(self, l: Config2D) -> Config2D {
        let o = self.origin;
        let (c, s) = (o.gamma.cos(), o.gamma.sin());
        Config2D::new(o.x + c * l.x - s * l.y, o.y + s * l.x + c * l.y, l.gamma + o.gamma)
    }
}

/// Rotation taking the initial tangent to `e1`, plus the initial position.
#[derive(Clone, Copy, Debug)]
pub struct Frame3 {
    origin: [f64; 3],
    rows: [[f64; 3]; 3],
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Frame3 {
    pub fn new(chi_i: &[f64]) -> Self {
        let t = unit([chi_i[3], chi_i[4], chi_i[5]]);
        // The canonical start maps to the identity.
        let helper = if t[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let b = unit(cross(t, helper));
        let n = cross(b, t);
        Self {
            origin: [chi_i[0], chi_i[1], chi_i[2]],
            rows: [t, n, b],
        }
    }

    pub fn rotate_to_local(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rows;
        std::array::from_fn(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
    }

    pub fn rotate_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rows;
        std::array::from_fn(|j| r[0][j] * v[0] + r[1][j] * v[1] + r[2][j] * v[2])
    }

    pub fn point_to_local(&self, p: [f64; 3]) -> [f64; 3] {
        self.rotate_to_local([p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]])
    }

    pub fn point_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotate_to_world(p);
        [q[0] + self.origin[0], q[1] + self.origin[1], q[2] + self.origin[2]]
    }
}

pub fn goal_3d(spec: &ProblemSpec) -> Goal3D {
    let frame = Frame3::new(&spec.chi_i);
    let f: Vec<f64> = spec.chi_f.iter().map(|c| c.unwrap_or(f64::NAN)).collect();
    let position = frame.point_to_local([f[0], f[1], f[2]]);
    let tangent = spec.chi_f[3].map(|_| frame.rotate_to_local([f[3], f[4], f[5]]));
    Goal3D::new(position, tangent)
}

pub fn goal_2d(spec: &ProblemSpec) -> Config2D {
    let f: Vec<f64> = spec.chi_f.iter().flatten().copied().collect();
    Frame2::new(&spec.chi_i).to_local(Config2D::new(f[0], f[1], f[2]))
}

/// Runs the solver for `spec`. An empty list means nothing converged.
pub fn solve(spec: &ProblemSpec) -> Result<Vec<Solved>, String> {
    match spec.system {
        System::Vdp => solve_vdp(spec),
        System::Dubins2d => solve_2d(spec),
        System::Dubins3d => solve_3d(spec),
    }
}

fn trajectory_name(k: usize) -> String {
    format!("trajectory_{k}.csv")
}

fn solve_vdp(spec: &ProblemSpec) -> Result<Vec<Solved>, String> {
    let problem = vdp_from_spec(spec)?;
    let sols = solve_p2_with(&problem, &p2_options(spec)).map_err(|e| e.to_string())?;
    Ok(sols.into_iter().enumerate().map(|(k, s)| vdp_record(k, s)).collect())
}

fn vdp_record(k: usize, s: P2Solution) -> Solved {
    let rows = s.trajectory.times.iter().enumerate().map(|(i, t)| {
        let mut row = vec![*t];
        row.extend(&s.trajectory.states[i]);
        row.extend(&s.trajectory.controls[i]);
        row
    });
    let csv = crate::output::csv(&["t", "x1", "x2", "u"], rows);
    Solved {
        record: SolutionRecord {
            index: k,
            residual_norm: s.residual_norm,
            iterations: Some(s.iterations),
            trajectory: trajectory_name(k),
            detail: Detail::Extremals {
                tau: s.tau,
                concat_time: s.concat_time,
                freed_values: s.freed_values,
                p1_0: s.p1_0,
                p2_0: s.p2_0,
                z: s.z,
                terminal_state: s.terminal_state,
            },
        },
        csv,
        polyline: None,
    }
}

/// Plot points along a 2D path: at least 64 segments per radian of turn.
pub fn polyline_2d(prims: &[Primitive2D], frame: &Frame2) -> Vec<[f64; 2]> {
    let mut c = Config2D::ORIGIN;
    let mut pts = vec![c];
    for p in prims {
        let segs = match p.kind {
            Kind2D::S => 1,
            _ => ((64.0 * p.length).ceil() as usize).max(1),
        };
        for j in 1..=segs {
            pts.push(step_2d(c, Primitive2D::new(p.kind, p.length * j as f64 / segs as f64)));
        }
        c = step_2d(c, *p);
    }
    pts.into_iter()
        .map(|q| {
            let w = frame.to_world(q);
            [w.x, w.y]
        })
        .collect()
}

fn solve_2d(spec: &ProblemSpec) -> Result<Vec<Solved>, String> {
    let opts = Dubins2dOptions {
        starts_per_pattern: spec.solver.starts,
        seed: spec.solver.seed,
        residual_tol: spec.solver.residual_tol,
        ..Dubins2dOptions::default()
    };
    let frame = Frame2::new(&spec.chi_i);
    let paths = solve_dubins2d_with(goal_2d(spec), spec.t_final, &opts).map_err(|e| e.to_string())?;
    paths
        .into_iter()
        .enumerate()
        .map(|(k, p)| record_2d(k, p, &frame))
        .collect()
}

fn record_2d(k: usize, p: TwoWordPath2D, frame: &Frame2) -> Result<Solved, String> {
    let traj = sample_path_2d(&p, TRAJECTORY_SAMPLES).map_err(|e| e.to_string())?;
    let rows = traj.times.iter().enumerate().map(|(i, s)| {
        let x = &traj.states[i];
        let w = frame.to_world(Config2D::new(x[0], x[1], x[2]));
        vec![*s, w.x, w.y, w.gamma, traj.controls[i][0]]
    });
    let csv = crate::output::csv(&["s", "x", "y", "gamma", "u"], rows);
    let end = frame.to_world(p.endpoint());
    Ok(Solved {
        polyline: Some(polyline_2d(&p.primitives(), frame)),
        csv,
        record: SolutionRecord {
            index: k,
            residual_norm: p.residual_norm,
            iterations: None,
            trajectory: trajectory_name(k),
            detail: Detail::Dubins2d {
                structure: p.structure(),
                directed_structure: p.directed_structure(),
                pattern: p.pattern.name(),
                total_length: p.total_length,
                word1: p.word1.primitives,
                word2: p.word2.primitives,
                terminal_state: vec![end.x, end.y, end.gamma],
            },
        },
    })
}

fn solve_3d(spec: &ProblemSpec) -> Result<Vec<Solved>, String> {
    let frame = Frame3::new(&spec.chi_i);
    let opts = Dubins3dOptions {
        starts_per_pattern: spec.solver.starts,
        seed: spec.solver.seed,
        residual_tol: spec.solver.residual_tol,
        families: spec
            .solver
            .families
            .iter()
            .map(|f| match f {
                Family::Cs => Family3D::CsWords,
                Family::H => Family3D::HWords,
            })
            .collect(),
        tangent_seed: spec.solver.tangent_seed.map(|s| frame.rotate_to_local(s)),
        ..Dubins3dOptions::default()
    };
    let goal = goal_3d(spec);
    let free = goal.tangent.is_none();
    let paths = solve_dubins3d_with(&goal, spec.t_final, &opts).map_err(|e| e.to_string())?;
    paths
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let sampled = sample_path_3d(&p, TRAJECTORY_SAMPLES).map_err(|e| e.to_string())?;
            let traj = &sampled.trajectory;
            let rows = traj.times.iter().enumerate().map(|(i, s)| {
                let x = &traj.states[i];
                let u = &traj.controls[i];
                let mut row = vec![*s];
                row.extend(frame.point_to_world([x[0], x[1], x[2]]));
                row.extend(frame.rotate_to_world([x[3], x[4], x[5]]));
                row.extend(frame.rotate_to_world([u[0], u[1], u[2]]));
                row
            });
            let csv = crate::output::csv(&["s", "x", "y", "z", "tx", "ty", "tz", "ux", "uy", "uz"], rows);
            let pos = frame.point_to_world(p.terminal.position);
            let tan = frame.rotate_to_world(p.terminal.tangent);
            let family = match p.family() {
                Family3D::CsWords => Family::Cs,
                Family3D::HWords => Family::H,
            };
            Ok(Solved {
                csv,
                polyline: None,
                record: SolutionRecord {
                    index: k,
                    residual_norm: p.residual_norm,
                    iterations: None,
                    trajectory: trajectory_name(k),
                    detail: Detail::Dubins3d {
                        family,
                        structure: p.structure(),
                        pattern: p.pattern.name(),
                        total_length: p.total_length,
                        unknowns: p.unknowns.clone(),
                        word1: p.word1.primitives.clone(),
                        word2: p.word2.primitives.clone(),
                        terminal_state: pos.iter().chain(&tan).copied().collect(),
                        freed_values: if free { tan.to_vec() } else { Vec::new() },
                    },
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let f2 = Frame2::new(&[1.0, -2.0, 0.7]);
        let c = Config2D::new(0.3, 0.4, 1.1);
        let back = f2.to_local(f2.to_world(c));
        assert!((back.x - c.x).abs() < 1e-14 && (back.y - c.y).abs() < 1e-14 && (back.gamma - c.gamma).abs() < 1e-14);

        let f3 = Frame3::new(&[1.0, 2.0, 3.0, 0.0, 0.6, 0.8]);
        assert!(f3.rotate_to_local([0.0, 0.6, 0.8]).iter().zip([1.0, 0.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-14));
        let p = [0.5, -1.0, 2.0];
        let q = f3.point_to_local(f3.point_to_world(p));
        assert!(q.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn default_3d_start_is_identity() {
        let f = Frame3::new(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.rotate_to_local([0.3, 0.4, 0.5]), [0.3, 0.4, 0.5]);
    }

    #[test]
    fn plot_resolves_arcs() {
        let prims = [Primitive2D::new(Kind2D::L, 1.0), Primitive2D::new(Kind2D::S, 2.0)];
        let pts = polyline_2d(&prims, &Frame2::new(&[0.0; 3]));
        assert_eq!(pts.len(), 1 + 64 + 1);
    }
}
