#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Optimal control of semilinear elliptic equations with constant or
//! radial controls: state solvers, the reduced cost functional, landscape
//! scans, target construction, convexity checks and descent.

pub mod convexity;
pub mod error;
pub mod functional;
pub mod landscape;
pub mod model;
pub mod optimizer;
pub mod pde;
pub mod search;
pub mod target_builder;
pub mod tridiag;

pub use error::{Error, Result};
pub use model::{
    AdjointField, Control, Diagnostics, Grid, Nonlinearity, Problem, ProblemConfig, ProblemKind, SolverKind,
    StateField, StepTarget,
};
pub use pde::{solve_adjoint, solve_state, Method, SolveOptions};
