//! ODE integration and finite-difference Jacobians shared by every solver in
//! the crate.

mod jacobian;
mod ode;

pub use jacobian::{fd_jacobian, fd_jacobian_bounded, FdScheme};
pub use ode::{
    integrate_adaptive, integrate_rk4, integrate_with_switching, integrate_with_switching_limit,
    Branch, IntegrationResult, IntegrationStatus, OdeProblem, DEFAULT_MAX_SWITCHES,
};

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("state became non-finite near t = {t} (last finite sample at t = {last_t})")]
    NonFinite {
        t: f64,
        last_t: f64,
        last_state: Vec<f64>,
    },
    #[error("residual is non-finite when perturbing column {column}")]
    JacobianColumn { column: usize },
}
