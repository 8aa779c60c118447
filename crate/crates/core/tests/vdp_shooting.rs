use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steering::numerics::{integrate_rk4, Branch, OdeProblem};
use steering::p2::*;
use steering::rootfind::{solve_lm, RootProblem};
use steering::vdp::*;

fn vdp_rhs(x: &[f64], p: &[f64], u: f64, out: &mut [f64]) {
    out[0] = x[1];
    out[1] = (1.0 - x[0] * x[0]) * x[1] - x[0] + u;
    out[2] = p[1] * (2.0 * x[0] * x[1] + 1.0);
    out[3] = -p[0] - p[1] * (1.0 - x[0] * x[0]);
}

fn rk4_step(v: &[f64], h: f64, u: f64, sign: f64) -> Vec<f64> {
    let f = |v: &[f64]| {
        let mut d = [0.0; 4];
        vdp_rhs(&v[..2], &v[2..], u, &mut d);
        d[0] *= sign;
        d[1] *= sign;
        d[2] *= sign;
        d[3] *= sign;
        d
    };
    let add = |a: &[f64], k: &[f64; 4], s: f64| -> Vec<f64> { a.iter().zip(k).map(|(x, y)| x + s * y).collect() };
    let k1 = f(v);
    let k2 = f(&add(v, &k1, h / 2.0));
    let k3 = f(&add(v, &k2, h / 2.0));
    let k4 = f(&add(v, &k3, h));
    (0..4).map(|i| v[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// Fixed-step RK4 with the switch located inside the step by bisection.
/// `sign = -1` integrates the time-reversed flow with `u = sgn(-p2)`, i.e.
/// the backward arc written in terms of the physical costate `-p`.
fn rk4_oracle(x0: &[f64], p0: &[f64], duration: f64, backward: bool, steps: usize) -> Vec<f64> {
    // Backward arc: x' = -f, p' = grad f^T p, u = sgn(-p2). With q = -p this
    // is x' = -f(x, sgn q2), q' = -(-grad f^T q), which is the forward flow
    // scaled by -1 and evaluated at q.
    let (sign, flip) = if backward { (-1.0, -1.0) } else { (1.0, 1.0) };
    let mut v: Vec<f64> = x0.iter().copied().chain(p0.iter().map(|c| flip * c)).collect();
    let h = duration / steps as f64;
    let mut u = Branch::of(v[3]).sign();
    for _ in 0..steps {
        let next = rk4_step(&v, h, u, sign);
        if Branch::of(next[3]).sign() != u {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if Branch::of(rk4_step(&v, mid, u, sign)[3]).sign() == u {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let at = rk4_step(&v, hi, u, sign);
            u = -u;
            v = rk4_step(&at, h - hi, u, sign);
        } else {
            v = next;
        }
    }
    for c in v[2..].iter_mut() {
        *c *= flip;
    }
    v
}

#[test]
fn costate_flow_matches_fd_gradient() {
    let f = vdp_field();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let u = [if rng.gen_bool(0.5) { 1.0 } else { -1.0 }];
        let mut dp = [0.0; 2];
        f.costate_dynamics(&x, &u, &p, &mut dp);
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (mut fp, mut fm) = ([0.0; 2], [0.0; 2]);
            f.dynamics(&xp, &u, &mut fp);
            f.dynamics(&xm, &u, &mut fm);
            let grad_dot_p: f64 = (0..2).map(|i| (fp[i] - fm[i]) / (2.0 * h) * p[i]).sum();
            assert!((dp[j] + grad_dot_p).abs() < 1e-6, "{x:?} {p:?} {j}");
        }
    }
}

#[test]
fn hamiltonian_grid_search_agrees_with_sign_rule() {
    let f = vdp_field();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let best = (0..201)
            .map(|k| -1.0 + 2.0 * k as f64 / 200.0)
            .max_by(|a, b| f.hamiltonian(&x, &p, &[*a]).total_cmp(&f.hamiltonian(&x, &p, &[*b])))
            .unwrap();
        let mut u = [0.0];
        f.maximizer(&x, &p, &mut u);
        assert_eq!(best, u[0]);
    }
}

#[test]
fn switching_flow_matches_fine_rk4() {
    let f = vdp_field();
    let p0 = [1.0_f64.cos(), 1.0_f64.sin()];
    let res = propagate_extremal(&f, &[2.0, 2.0], &p0, 2.0, Direction::Forward, 1e-11, f64::INFINITY).unwrap();
    let oracle = rk4_oracle(&[2.0, 2.0], &p0, 2.0, false, 1_000_000);
    for (a, b) in res.final_state().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn adaptive_flow_over_full_horizon_matches_fine_rk4() {
    let f = vdp_field();
    let p0 = [0.3_f64.cos(), 0.3_f64.sin()];
    let res = propagate_extremal(&f, &[2.0, 2.0], &p0, 4.0, Direction::Forward, 1e-10, f64::INFINITY).unwrap();
    let oracle = rk4_oracle(&[2.0, 2.0], &p0, 4.0, false, 1_000_000);
    for (a, b) in res.final_state().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn residual_matches_independent_propagation() {
    let problem = vdp_problem(vec![Some(0.6), Some(-0.9)], 4.0).unwrap();
    let r = assemble_residual(&problem, 1e-11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let z = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.05..0.95)];
        let got = r(&z);
        let (a, b) = (sphere_point(&z[..1]), sphere_point(&z[1..2]));
        let fwd = rk4_oracle(&[2.0, 2.0], &a, z[2] * 4.0, false, 1_000_000);
        let bwd = rk4_oracle(&[0.6, -0.9], &b, (1.0 - z[2]) * 4.0, true, 1_000_000);
        for i in 0..2 {
            assert!((got[i] - (fwd[i] - bwd[i])).abs() < 1e-7, "{z:?}: {got:?}");
        }
    }
}

#[test]
fn hamiltonian_constant_between_switches() {
    let f = vdp_field();
    let p0 = [2.2_f64.cos(), 2.2_f64.sin()];
    let res = propagate_extremal(&f, &[2.0, 2.0], &p0, 4.0, Direction::Forward, 1e-11, 0.01).unwrap();
    // The maximized Hamiltonian is continuous across switches (p2 = 0 there),
    // so it is constant over the whole arc.
    let h = |v: &[f64]| {
        let mut u = [0.0];
        f.maximizer(&v[..2], &v[2..], &mut u);
        f.hamiltonian(&v[..2], &v[2..], &u)
    };
    let h0 = h(&res.states[0]);
    for v in &res.states {
        assert!((h(v) - h0).abs() < 1e-7);
    }
    // u is constant strictly between consecutive switch times.
    let mut cuts = vec![0.0];
    cuts.extend(&res.switch_times);
    cuts.push(4.0);
    for w in cuts.windows(2) {
        let us: Vec<f64> = res
            .times
            .iter()
            .zip(&res.states)
            .filter(|(t, _)| **t > w[0] + 1e-9 && **t < w[1] - 1e-9)
            .map(|(_, v)| Branch::of(v[3]).sign())
            .collect();
        assert!(us.windows(2).all(|p| p[0] == p[1]));
    }
}

#[test]
fn reachable_target_from_constant_control_is_solved() {
    // Forward-simulate u = +1 for one time unit to build a reachable target.
    let ode = OdeProblem::new(
        |_t: f64, v: &[f64], o: &mut [f64]| {
            o[0] = v[1];
            o[1] = (1.0 - v[0] * v[0]) * v[1] - v[0] + 1.0;
        },
        0.0,
        1.0,
        vec![2.0, 2.0],
    );
    let target = integrate_rk4(&ode, 100_000).unwrap().final_state().to_vec();
    let problem = vdp_problem(vec![Some(target[0]), Some(target[1])], 1.0).unwrap();
    let sols = solve_p2(&problem, 32).unwrap();
    assert!(!sols.is_empty());
    assert!(sols[0].residual_norm <= 1e-8);
    let report = verify_solution(&sols[0], &problem);
    assert!(report.terminal_error <= 1e-6, "{report:?}");
}

#[test]
fn solutions_satisfy_boundary_conditions_and_maximization() {
    let problem = vdp_problem(vec![Some(0.6), Some(-0.9)], 4.0).unwrap();
    let sols = solve_p2(&problem, 24).unwrap();
    assert!(!sols.is_empty());
    for s in &sols {
        assert!((s.p1_0.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((s.p2_0.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((0.0..=1.0).contains(&s.tau));
        assert_eq!(s.trajectory.times.len(), 1001);
        let first = &s.trajectory.states[0];
        assert!((first[0] - 2.0).abs() < 1e-8 && (first[1] - 2.0).abs() < 1e-8);
        let last = s.trajectory.states.last().unwrap();
        assert!((last[0] - 0.6).abs() < 1e-8 && (last[1] + 0.9).abs() < 1e-8);
        let r = verify_solution(s, &problem);
        assert!(r.terminal_error <= 1e-6, "{r:?}");
        assert!(r.junction_error <= 1e-6, "{r:?}");
        assert!(r.max_hamiltonian_violation <= 1e-9, "{r:?}");
    }
    // Pairwise distinct.
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            let d: f64 = sols[i]
                .p1_0
                .iter()
                .chain(&sols[i].p2_0)
                .chain([&sols[i].tau])
                .zip(sols[j].p1_0.iter().chain(&sols[j].p2_0).chain([&sols[j].tau]))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(d > 1e-4);
        }
    }
}

#[test]
fn perturbed_tau_is_caught_when_it_breaks_the_junction() {
    let problem = vdp_problem(vec![Some(0.6), Some(-0.9)], 4.0).unwrap();
    let opts = P2Options {
        starts: 128,
        tau_seed: Some(0.4453),
        ..P2Options::default()
    };
    let sols = solve_p2_with(&problem, &opts).unwrap();
    let pinned = sols.iter().find(|s| (s.tau - 0.4453).abs() < 1e-9).expect("pinned solution");
    assert!(verify_solution(pinned, &problem).terminal_error <= 1e-6);

    // Sliding the junction along a stretch where both arcs share the same
    // control leaves a valid steering, so only some shifts are detectable.
    let mut broken = 0;
    for s in sols.iter().chain(solve_p2(&problem, 24).unwrap().iter()) {
        for dt in [-0.05, 0.05] {
            let tau = s.tau + dt;
            if !(0.0..=1.0).contains(&tau) {
                continue;
            }
            let bumped = build_solution(&problem, &s.z_with_tau(tau), 0, &opts).unwrap();
            let report = verify_solution(&bumped, &problem);
            if bumped.residual_norm > 1e-3 {
                broken += 1;
                assert!(report.terminal_error > 1e-3, "{report:?}");
            } else {
                assert!(report.terminal_error <= 1e-6, "{report:?}");
            }
        }
    }
    assert!(broken > 0);
}

#[test]
fn time_reversed_solution_solves_reversed_problem() {
    let problem = vdp_problem(vec![Some(0.6), Some(-0.9)], 4.0).unwrap();
    let sols = solve_p2(&problem, 16).unwrap();
    let sol = &sols[0];
    let reversed = problem.reversed().unwrap();
    let back = build_solution(&reversed, &sol.reversed_z(), 0, &P2Options::default()).unwrap();
    let report = verify_solution(&back, &reversed);
    assert!(report.terminal_error <= 1e-6, "{report:?}");
    assert!(report.residual_norm <= 1e-6, "{report:?}");
    // Trajectories are mirror images (up to sample interpolation).
    let n = sol.trajectory.states.len();
    for k in 0..n {
        let a = &sol.trajectory.states[k];
        let b = &back.trajectory.states[n - 1 - k];
        assert!((a[0] - b[0]).abs() < 1e-3 && (a[1] - b[1]).abs() < 1e-3, "sample {k}");
    }
}

#[test]
fn pinned_lm_on_flat_residual_is_stable() {
    // A pinned tau leaves only the costate angles free; LM must still
    // return a finite iterate.
    let problem = vdp_problem(vec![Some(0.6), Some(-0.9)], 4.0).unwrap();
    let r = assemble_residual(&problem, 1e-8);
    let p = RootProblem::new(&r, vec![0.1, 0.2, 0.5]).with_bounds(vec![-10.0, -10.0, 0.5], vec![10.0, 10.0, 0.5]);
    let s = solve_lm(&p).unwrap();
    assert!(s.x.iter().all(|v| v.is_finite()));
    assert_eq!(s.x[2], 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_arc_maximizes_hamiltonian(angle in -3.0f64..3.0, duration in 0.5f64..4.0) {
        let f = vdp_field();
        let res = propagate_extremal(&f, &[2.0, 2.0], &[angle.cos(), angle.sin()], duration, Direction::Forward, 1e-10, f64::INFINITY).unwrap();
        let omega = f.control_samples();
        for k in 0..100 {
            let v = res.state_at(duration * k as f64 / 99.0);
            let mut u = [0.0];
            f.maximizer(&v[..2], &v[2..], &mut u);
            let h = f.hamiltonian(&v[..2], &v[2..], &u);
            for w in &omega {
                prop_assert!(f.hamiltonian(&v[..2], &v[2..], w) <= h + 1e-9);
            }
        }
    }
}
