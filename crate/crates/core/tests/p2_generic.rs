use steering::numerics::Branch;
use steering::p2::*;

/// `f = 0`: every point is stationary.
#[derive(Clone)]
struct Still;

impl ExtremalField for Still {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn dynamics(&self, _x: &[f64], _u: &[f64], dx: &mut [f64]) {
        dx.fill(0.0);
    }
    fn costate_dynamics(&self, _x: &[f64], _u: &[f64], _p: &[f64], dp: &mut [f64]) {
        dp.fill(0.0);
    }
    fn maximizer(&self, _x: &[f64], _p: &[f64], u: &mut [f64]) {
        u[0] = 0.0;
    }
    fn control_samples(&self) -> Vec<Vec<f64>> {
        vec![vec![-1.0], vec![0.0], vec![1.0]]
    }
}

/// Double integrator `x1' = x2`, `x2' = u`, `|u| <= 1`.
#[derive(Clone)]
struct DoubleIntegrator;

impl ExtremalField for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn dynamics(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = u[0];
    }
    fn costate_dynamics(&self, _x: &[f64], _u: &[f64], p: &[f64], dp: &mut [f64]) {
        dp[0] = 0.0;
        dp[1] = -p[0];
    }
    fn maximizer(&self, _x: &[f64], p: &[f64], u: &mut [f64]) {
        u[0] = Branch::of(p[1]).sign();
    }
    fn switch_value(&self, _x: &[f64], p: &[f64]) -> Option<f64> {
        Some(p[1])
    }
    fn branch_control(&self, _x: &[f64], _p: &[f64], b: Branch, u: &mut [f64]) {
        u[0] = b.sign();
    }
    fn control_samples(&self) -> Vec<Vec<f64>> {
        (0..=100).map(|k| vec![-1.0 + 0.02 * k as f64]).collect()
    }
}

#[test]
fn zero_field_residual_vanishes_everywhere() {
    let problem = P2Problem::new(Still, vec![0.5, -1.0], vec![Some(0.5), Some(-1.0)], 3.0).unwrap();
    let r = assemble_residual(&problem, 1e-10);
    for z in [[0.1, 2.0, 0.5], [-3.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
        assert_eq!(r(&z), vec![0.0, 0.0]);
    }
}

#[test]
fn zero_field_verification_is_exact() {
    let problem = P2Problem::new(Still, vec![0.5, -1.0], vec![Some(0.5), Some(-1.0)], 3.0).unwrap();
    let sols = solve_p2(&problem, 4).unwrap();
    assert!(!sols.is_empty());
    let r = verify_solution(&sols[0], &problem);
    assert_eq!(r.terminal_error, 0.0);
    assert_eq!(r.junction_error, 0.0);
    assert_eq!(r.max_hamiltonian_violation, 0.0);
    assert_eq!(r.residual_norm, 0.0);
}

#[test]
fn double_integrator_rest_to_rest() {
    // From (1, 0) to (0, 0) in T = 2: u = -1 then +1, switch at t = 1.
    let problem = P2Problem::new(DoubleIntegrator, vec![1.0, 0.0], vec![Some(0.0), Some(0.0)], 2.0).unwrap();
    let sols = solve_p2(&problem, 32).unwrap();
    assert!(!sols.is_empty());
    for s in &sols {
        let r = verify_solution(s, &problem);
        assert!(r.terminal_error <= 1e-6, "{r:?}");
        // Minimum time equals T here, so the only admissible control is
        // the time-optimal one.
        let mid = s.trajectory.states[500].clone();
        assert!((mid[0] - 0.5).abs() < 1e-3 && (mid[1] + 1.0).abs() < 1e-3, "{mid:?}");
    }
}

#[test]
fn free_component_is_reported() {
    // x1(T) fixed, x2(T) free; the solver must return a consistent x2.
    let problem = P2Problem::new(DoubleIntegrator, vec![0.0, 0.0], vec![Some(0.5), None], 2.0).unwrap();
    let sols = solve_p2(&problem, 16).unwrap();
    assert!(!sols.is_empty());
    for s in &sols {
        assert_eq!(s.freed_values.len(), 1);
        let last = s.trajectory.states.last().unwrap();
        assert!((last[1] - s.freed_values[0]).abs() < 1e-8);
        assert!((last[0] - 0.5).abs() < 1e-8);
        assert!(verify_solution(s, &problem).terminal_error <= 1e-6);
    }
}

#[test]
fn unreachable_target_gives_empty_list() {
    // |x1(2)| <= 2 from rest at the origin.
    let problem = P2Problem::new(DoubleIntegrator, vec![0.0, 0.0], vec![Some(5.0), Some(0.0)], 2.0).unwrap();
    assert!(solve_p2(&problem, 8).unwrap().is_empty());
}

#[test]
fn invalid_problems_are_rejected() {
    assert!(P2Problem::new(Still, vec![0.0, 0.0], vec![None, None], 1.0).is_err());
    assert!(P2Problem::new(Still, vec![0.0, 0.0], vec![Some(0.0), None], 0.0).is_err());
    assert!(P2Problem::new(Still, vec![0.0], vec![Some(0.0)], 1.0).is_err());
    let ok = P2Problem::new(Still, vec![0.0, 0.0], vec![Some(0.0), Some(0.0)], 1.0).unwrap();
    assert!(solve_p2(&ok, 0).is_err());
}

#[test]
fn sphere_angles_round_trip() {
    for v in [[0.6, 0.8, 0.0], [-0.2, -0.3, 0.9327379053088815], [0.0, 0.0, -1.0]] {
        let back = sphere_point(&sphere_angles(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{v:?} -> {back:?}");
        }
    }
}
