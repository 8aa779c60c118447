//! Controlled Van der Pol oscillator `x1' = x2`, `x2' = (1 - x1^2) x2 - x1 + u`
//! with `|u| <= 1`. The Hamiltonian is maximized by `u = sgn(p2)`.

use crate::numerics::Branch;
use crate::p2::{ExtremalField, P2Error, P2Problem};

/// Initial state used by default.
pub const VDP_DEFAULT_INITIAL: [f64; 2] = [2.0, 2.0];

/// Number of control samples on `[-1, 1]` used for verification.
pub const VDP_CONTROL_SAMPLES: usize = 101;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VdpField;

pub fn vdp_field() -> VdpField {
    VdpField
}

impl ExtremalField for VdpField {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = (1.0 - x[0] * x[0]) * x[1] - x[0] + u[0];
    }

    fn costate_dynamics(&self, x: &[f64], _u: &[f64], p: &[f64], dp: &mut [f64]) {
        dp[0] = p[1] * (2.0 * x[0] * x[1] + 1.0);
        dp[1] = -p[0] - p[1] * (1.0 - x[0] * x[0]);
    }

    fn maximizer(&self, _x: &[f64], p: &[f64], u: &mut [f64]) {
        u[0] = Branch::of(p[1]).sign();
    }

    fn switch_value(&self, _x: &[f64], p: &[f64]) -> Option<f64> {
        Some(p[1])
    }

    fn branch_control(&self, _x: &[f64], _p: &[f64], branch: Branch, u: &mut [f64]) {
        u[0] = branch.sign();
    }

    fn control_samples(&self) -> Vec<Vec<f64>> {
        let k = VDP_CONTROL_SAMPLES - 1;
        (0..=k).map(|i| vec![-1.0 + 2.0 * i as f64 / k as f64]).collect()
    }
}

/// P2 problem from the default initial state `(2, 2)`.
pub fn vdp_problem(chi_f_spec: Vec<Option<f64>>, t_final: f64) -> Result<P2Problem<VdpField>, P2Error> {
    P2Problem::new(VdpField, VDP_DEFAULT_INITIAL.to_vec(), chi_f_spec, t_final)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_at_origin() {
        let f = vdp_field();
        let (x, p) = ([0.0, 0.0], [0.0, 1.0]);
        let mut u = [0.0];
        f.maximizer(&x, &p, &mut u);
        assert_eq!(u, [1.0]);
        let mut dx = [0.0; 2];
        let mut dp = [0.0; 2];
        f.dynamics(&x, &u, &mut dx);
        f.costate_dynamics(&x, &u, &p, &mut dp);
        assert_eq!(dx, [0.0, 1.0]);
        assert_eq!(dp, [1.0, -1.0]);
    }

    #[test]
    fn negative_switch_gives_minus_one() {
        let mut u = [0.0];
        vdp_field().maximizer(&[3.0, -7.0], &[0.2, -0.5], &mut u);
        assert_eq!(u, [-1.0]);
    }

    #[test]
    fn zero_switch_takes_plus_one() {
        let mut u = [0.0];
        vdp_field().maximizer(&[0.0, 0.0], &[1.0, 0.0], &mut u);
        assert_eq!(u, [1.0]);
    }

    #[test]
    fn control_grid_spans_omega() {
        let s = vdp_field().control_samples();
        assert_eq!(s.len(), 101);
        assert_eq!(s[0], vec![-1.0]);
        assert_eq!(s[100], vec![1.0]);
    }
}
