//! Minimal and maximal solutions of obstacle-type quasi-variational
//! inequalities on a 1D P1 discretization, with Moreau–Yosida penalization,
//! sensitivity analysis and optimal control.
//!
//! Everything is generic over [`Scalar`] (`f32`/`f64`); the `*64` aliases
//! below fix double precision.

// `!(x > 0)` style guards are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod control;
pub mod error;
pub mod extremal;
pub mod fem;
pub mod linalg;
pub mod obstacle;
pub mod penalty;
pub mod scalar;
pub mod sensitivity;
pub mod vi;

pub use control::{
    bouligand_residual, certify_stationarity, gradient_check, optimize, reduced_objective,
    solve_adjoints, ControlProblem, OptimizeOptions, StationarityCertificate,
};
pub use error::{QviError, Result};
pub use extremal::{
    contraction_constants, iterate_extremal, lipschitz_probe, make_interval_from_bound,
    rho_continuation, Branch, ExtremalOptions, ExtremalResult, OrderInterval,
};
pub use fem::{
    inf, order_leq, pos_part, solve_linear, sup, DiscreteSpace, DualField, Field, TOL_ORD,
};
pub use obstacle::{
    thermo_lipschitz_radius, ConstantObstacle, InverseLaplacianObstacle, ObstacleMap,
    ThermoformingObstacle,
};
pub use penalty::{sigma, sigma_field, sigma_prime, sigma_prime_diag, PenaltyParams};
pub use scalar::Scalar;
pub use sensitivity::{
    deriv_z, deriv_z_rho, fd_converges, fd_errors, hadamard_check, DerivativeOptions,
};
pub use vi::{pdas, solve_s, solve_t_rho, Constraint, SolveReport, SolverOptions};

pub type Field64 = Field<f64>;
pub type DualField64 = DualField<f64>;
pub type DiscreteSpace64 = DiscreteSpace<f64>;
