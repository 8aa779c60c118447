//! Independent re-check of a `summary.json`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use steering::dubins2d::{endpoint_2d, wrap_angle, Config2D, Word2D};
use steering::dubins3d::{endpoint_3d, Frame3D, Primitive3D};
use steering::p2::{build_solution, verify_solution};

use crate::spec::{ProblemSpec, System};
use crate::steer::{p2_options, vdp_from_spec, Detail, Frame2, Frame3, SolutionRecord};

/// Terminal error bound for shooting solutions (max norm, fixed components).
pub const P2_TERMINAL_TOL: f64 = 1e-6;
pub const P2_JUNCTION_TOL: f64 = 1e-6;
pub const P2_HAMILTONIAN_TOL: f64 = 1e-9;
pub const DUBINS2D_ENDPOINT_TOL: f64 = 1e-8;
pub const DUBINS3D_ENDPOINT_TOL: f64 = 1e-6;
pub const LENGTH_TOL: f64 = 1e-10;
/// The 3D residual carries the length deficit, so lengths are only as exact
/// as the endpoint.
pub const DUBINS3D_LENGTH_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub spec: Value,
    pub solutions: Vec<SolutionRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub index: usize,
    pub terminal_error: f64,
    pub junction_error: Option<f64>,
    pub hamiltonian_violation: Option<f64>,
    pub length_error: Option<f64>,
    pub ok: bool,
    pub note: Option<String>,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
        write!(
            f,
            "record {}: terminal_error {:.3e}, junction_error {}, hamiltonian_violation {}, length_error {} -> {}",
            self.index,
            self.terminal_error,
            opt(self.junction_error),
            opt(self.hamiltonian_violation),
            opt(self.length_error),
            if self.ok { "ok" } else { "FAIL" }
        )?;
        if let Some(n) = &self.note {
            write!(f, " ({n})")?;
        }
        Ok(())
    }
}

fn failed(index: usize, note: String) -> Check {
    Check {
        index,
        terminal_error: f64::INFINITY,
        junction_error: None,
        hamiltonian_violation: None,
        length_error: None,
        ok: false,
        note: Some(note),
    }
}

pub fn check_record(spec: &ProblemSpec, r: &SolutionRecord) -> Check {
    match (&r.detail, spec.system) {
        (Detail::Extremals { tau, z, .. }, System::Vdp) => check_p2(spec, r.index, *tau, z),
        (Detail::Dubins2d { word1, word2, .. }, System::Dubins2d) => {
            let (w1, w2) = match (Word2D::new(word1.clone()), Word2D::new(word2.clone())) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return failed(r.index, e.to_string()),
            };
            let prims: Vec<_> = w1.primitives.iter().chain(&w2.primitives).copied().collect();
            let end = Frame2::new(&spec.chi_i).to_world(endpoint_2d(Config2D::ORIGIN, &prims));
            let g: Vec<f64> = spec.chi_f.iter().flatten().copied().collect();
            let terminal_error = (end.x - g[0]).abs().max((end.y - g[1]).abs()).max(wrap_angle(end.gamma - g[2]).abs());
            let length_error = (w1.length() + w2.length() - spec.t_final).abs();
            Check {
                index: r.index,
                terminal_error,
                junction_error: None,
                hamiltonian_violation: None,
                length_error: Some(length_error),
                ok: terminal_error <= DUBINS2D_ENDPOINT_TOL && length_error <= LENGTH_TOL,
                note: None,
            }
        }
        (Detail::Dubins3d { word1, word2, .. }, System::Dubins3d) => check_3d(spec, r.index, word1, word2),
        _ => failed(r.index, format!("record kind does not match system {:?}", spec.system)),
    }
}

fn check_p2(spec: &ProblemSpec, index: usize, tau: f64, z: &[f64]) -> Check {
    let problem = match vdp_from_spec(spec) {
        Ok(p) => p,
        Err(e) => return failed(index, e),
    };
    let tau_at = 2 * (problem.state_dim() - 1);
    if z.len() != problem.n_unknowns() || !(0.0..=1.0).contains(&tau) {
        return failed(index, "malformed shooting vector or tau outside [0, 1]".into());
    }
    let mut z = z.to_vec();
    z[tau_at] = tau;
    let sol = match build_solution(&problem, &z, 0, &p2_options(spec)) {
        Ok(s) => s,
        Err(e) => return failed(index, e.to_string()),
    };
    let rep = verify_solution(&sol, &problem);
    Check {
        index,
        terminal_error: rep.terminal_error,
        junction_error: Some(rep.junction_error),
        hamiltonian_violation: Some(rep.max_hamiltonian_violation),
        length_error: None,
        ok: rep.terminal_error <= P2_TERMINAL_TOL
            && rep.junction_error <= P2_JUNCTION_TOL
            && rep.max_hamiltonian_violation <= P2_HAMILTONIAN_TOL,
        note: None,
    }
}

fn check_3d(spec: &ProblemSpec, index: usize, word1: &[Primitive3D], word2: &[Primitive3D]) -> Check {
    let prims: Vec<Primitive3D> = word1.iter().chain(word2).copied().collect();
    if prims.iter().any(|p| !(p.length() >= 0.0)) {
        return failed(index, "negative primitive length".into());
    }
    let end = match endpoint_3d(Frame3D::CANONICAL, &prims) {
        Ok(e) => e,
        Err(e) => return failed(index, e.to_string()),
    };
    let frame = Frame3::new(&spec.chi_i);
    let pos = frame.point_to_world(end.position);
    let tan = frame.rotate_to_world(end.tangent);
    let mut terminal_error = 0.0_f64;
    for (i, g) in spec.chi_f.iter().enumerate() {
        if let Some(g) = g {
            let v = if i < 3 { pos[i] } else { tan[i - 3] };
            terminal_error = terminal_error.max((v - g).abs());
        }
    }
    let length_error = (prims.iter().map(Primitive3D::length).sum::<f64>() - spec.t_final).abs();
    Check {
        index,
        terminal_error,
        junction_error: None,
        hamiltonian_violation: None,
        length_error: Some(length_error),
        ok: terminal_error <= DUBINS3D_ENDPOINT_TOL && length_error <= DUBINS3D_LENGTH_TOL,
        note: None,
    }
}

pub fn check_summary(summary: &Summary) -> Result<Vec<Check>, String> {
    let spec = ProblemSpec::from_value(&summary.spec).map_err(|e| e.to_string())?;
    Ok(summary.solutions.iter().map(|r| check_record(&spec, r)).collect())
}
