use nalgebra::DMatrix;

use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdScheme {
    Forward,
    Central,
}

/// Finite-difference Jacobian of `residual` at `point`. Rows index residual
/// components, columns index parameters. Column `i` uses the step
/// `h * max(1, |x_i|)`.
pub fn fd_jacobian<F>(
    residual: F,
    point: &[f64],
    scheme: FdScheme,
    h: f64,
) -> Result<DMatrix<f64>, NumericsError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = point.len();
    fd_jacobian_bounded(
        residual,
        point,
        None,
        &vec![f64::NEG_INFINITY; n],
        &vec![f64::INFINITY; n],
        scheme,
        h,
    )
}

/// As [`fd_jacobian`], keeping every stencil point inside `[lower, upper]`.
/// A central stencil that would leave the box degrades to a one-sided
/// difference on the feasible side. `base`, when given, must equal
/// `residual(point)`.
pub fn fd_jacobian_bounded<F>(
    residual: F,
    point: &[f64],
    base: Option<&[f64]>,
    lower: &[f64],
    upper: &[f64],
    scheme: FdScheme,
    h: f64,
) -> Result<DMatrix<f64>, NumericsError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = point.len();
    let owned;
    let r0: &[f64] = match base {
        Some(b) => b,
        None => {
            owned = residual(point);
            &owned
        }
    };
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut x = point.to_vec();
    for col in 0..n {
        let xi = point[col];
        let step = h * xi.abs().max(1.0);
        let can_up = xi + step <= upper[col];
        let can_down = xi - step >= lower[col];
        let eval = |x: &mut Vec<f64>, v: f64| -> Result<Vec<f64>, NumericsError> {
            x[col] = v;
            let r = residual(x);
            if r.len() != m || r.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::JacobianColumn { column: col });
            }
            Ok(r)
        };
        match (scheme, can_up, can_down) {
            (FdScheme::Central, true, true) => {
                let rp = eval(&mut x, xi + step)?;
                let rm = eval(&mut x, xi - step)?;
                for row in 0..m {
                    jac[(row, col)] = (rp[row] - rm[row]) / (2.0 * step);
                }
            }
            (_, true, _) => {
                let rp = eval(&mut x, xi + step)?;
                for row in 0..m {
                    jac[(row, col)] = (rp[row] - r0[row]) / step;
                }
            }
            (_, false, true) => {
                let rm = eval(&mut x, xi - step)?;
                for row in 0..m {
                    jac[(row, col)] = (r0[row] - rm[row]) / step;
                }
            }
            (_, false, false) => {
                // Degenerate box narrower than the step: leave the column zero.
            }
        }
        x[col] = xi;
    }
    Ok(jac)
}
