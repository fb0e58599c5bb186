//! Finite-difference state and adjoint solvers.
//!
//! The state equation `-Laplace(y) + f(y) = source` is discretized with the
//! standard three-point stencil. Radial problems use
//! `y'' + ((n-1)/rho) y'` with the symmetric limit `(2n/h^2)(y_0 - y_1)` at the
//! origin. Dirichlet nodes are kept in the system as identity rows, so every
//! vector here has one entry per grid node.
//!
//! Two nonlinear solvers are provided. The fixed-point iteration freezes the
//! secant multiplier `f(theta)/theta` of the previous relaxed iterate, solves
//! the resulting linear problem and relaxes
//! `theta_k = w * theta_{k-1} + (1 - w) * y_k`. Newton's method is damped by
//! successive halving on the residual norm. `Method::Auto` runs the
//! fixed-point iteration and falls back to Newton when it fails.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdjointField, Control, Diagnostics, Grid, Problem, ProblemKind, SolverKind, StateField};
use crate::tridiag::Tridiagonal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedPoint,
    Newton,
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub method: Method,
    /// Sup-norm step tolerance, relative to `max(1, ||y||_inf)`.
    pub tol_step: f64,
    /// Tolerance on the scaled residual (see [`scaled_residual`]).
    pub tol_res: f64,
    pub max_iters: usize,
    /// Weight of the previous iterate in the fixed-point relaxation.
    pub relaxation: f64,
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            tol_step: 1e-10,
            tol_res: 1e-8,
            max_iters: 500,
            relaxation: 0.5,
            initial_guess: None,
        }
    }
}

impl SolveOptions {
    /// Newton iterated to round-off; used where states are differenced.
    pub fn precise() -> Self {
        Self { method: Method::Newton, tol_step: 1e-13, tol_res: 1e-13, max_iters: 200, ..Self::default() }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_step > 0.0 && self.tol_res > 0.0) {
            return Err(Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 1.0) {
            return Err(Error::InvalidInput(format!("relaxation must lie in (0, 1) (got {})", self.relaxation)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Discrete `-Laplace` with identity rows at Dirichlet nodes.
pub(crate) struct Operator {
    pub lap: Tridiagonal,
    pub dirichlet: Vec<bool>,
}

pub(crate) fn operator(problem: &Problem) -> Operator {
    let grid = problem.grid();
    let n = grid.len();
    let h = grid.dx();
    let h2 = h * h;
    let mut lap = Tridiagonal::zeros(n);
    let mut dirichlet = vec![false; n];
    let radial = problem.kind() != ProblemKind::IntervalBoundary;
    let dim = problem.dim() as f64;

    for j in 1..n - 1 {
        let drift = if radial { (dim - 1.0) / (2.0 * h * grid.x(j)) } else { 0.0 };
        lap.sub[j] = -1.0 / h2 + drift;
        lap.diag[j] = 2.0 / h2;
        lap.sup[j] = -1.0 / h2 - drift;
    }
    if radial {
        lap.diag[0] = 2.0 * dim / h2;
        lap.sup[0] = -2.0 * dim / h2;
    } else {
        lap.diag[0] = 1.0;
        dirichlet[0] = true;
    }
    lap.diag[n - 1] = 1.0;
    dirichlet[n - 1] = true;
    Operator { lap, dirichlet }
}

/// Right-hand side of the state equation: Dirichlet data on boundary rows,
/// `u * chi` on control rows.
pub(crate) fn source(problem: &Problem, control: &Control) -> Result<Vec<f64>> {
    let n = problem.grid().len();
    let mut rhs = vec![0.0; n];
    match (problem.kind(), control) {
        (ProblemKind::IntervalBoundary, Control::Constant(u)) => {
            rhs[0] = *u;
            rhs[n - 1] = *u;
        }
        (ProblemKind::RadialBoundary, Control::Constant(u)) => rhs[n - 1] = *u,
        (ProblemKind::RadialInternal, Control::Constant(u)) => {
            for (r, c) in rhs.iter_mut().zip(problem.ctrl_indicator()) {
                *r = c * u;
            }
        }
        (ProblemKind::RadialInternal, Control::Field(values)) => {
            if values.len() != problem.ctrl_len() {
                return Err(Error::DimensionMismatch { expected: problem.ctrl_len(), got: values.len() });
            }
            for ((r, c), u) in rhs.iter_mut().zip(problem.ctrl_indicator()).zip(values) {
                *r = c * u;
            }
        }
        (_, Control::Field(_)) => {
            return Err(Error::InvalidInput("boundary problems take a constant control".into()));
        }
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("control contains non-finite values".into()));
    }
    Ok(rhs)
}

fn residual_vector(problem: &Problem, op: &Operator, rhs: &[f64], y: &[f64]) -> Vec<f64> {
    let f = problem.nonlinearity();
    let mut r = op.lap.apply(y);
    for j in 0..y.len() {
        if !op.dirichlet[j] {
            r[j] += f.value(y[j]);
        }
        r[j] -= rhs[j];
    }
    r
}

/// Sup norm of the residual, each row divided by the magnitude of its terms.
fn scaled_residual_with(problem: &Problem, op: &Operator, rhs: &[f64], y: &[f64]) -> f64 {
    let f = problem.nonlinearity();
    let n = y.len();
    let res = residual_vector(problem, op, rhs, y);
    let mut scale: f64 = 1.0;
    for j in 0..n {
        if op.dirichlet[j] {
            continue;
        }
        let mut m = (op.lap.diag[j] * y[j]).abs() + f.value(y[j]).abs() + rhs[j].abs();
        if j > 0 {
            m += (op.lap.sub[j] * y[j - 1]).abs();
        }
        if j + 1 < n {
            m += (op.lap.sup[j] * y[j + 1]).abs();
        }
        scale = scale.max(m);
    }
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let v = if op.dirichlet[j] { res[j].abs() / (1.0 + rhs[j].abs()) } else { res[j].abs() / scale };
        if !v.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(v);
    }
    worst
}

/// Residual sup norm divided by the largest row magnitude `|L y| + |f(y)| + |rhs|`.
pub fn scaled_residual(problem: &Problem, control: &Control, y: &[f64]) -> Result<f64> {
    let n = problem.grid().len();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let op = operator(problem);
    let rhs = source(problem, control)?;
    Ok(scaled_residual_with(problem, &op, &rhs, y))
}

/// Sup norm of `-Laplace_h(y) + f(y) - source` over the non-Dirichlet rows.
/// A Dirichlet row that does not hold exactly yields `+inf`.
pub fn state_residual(problem: &Problem, control: &Control, state: &StateField) -> Result<f64> {
    let n = problem.grid().len();
    if state.samples.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: state.samples.len() });
    }
    let op = operator(problem);
    let rhs = source(problem, control)?;
    let res = residual_vector(problem, &op, &rhs, &state.samples);
    let mut worst: f64 = 0.0;
    for j in 0..n {
        if op.dirichlet[j] {
            if state.samples[j] != rhs[j] {
                return Ok(f64::INFINITY);
            }
        } else {
            worst = worst.max(res[j].abs());
        }
    }
    Ok(worst)
}

fn cold_start(problem: &Problem, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    match problem.kind() {
        // linear interpolant of equal end values
        ProblemKind::IntervalBoundary => vec![rhs[0]; n],
        ProblemKind::RadialBoundary => vec![rhs[n - 1]; n],
        ProblemKind::RadialInternal => vec![0.0; n],
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn impose_dirichlet(op: &Operator, rhs: &[f64], y: &mut [f64]) {
    for j in 0..y.len() {
        if op.dirichlet[j] {
            y[j] = rhs[j];
        }
    }
}

fn fixed_point(
    problem: &Problem,
    op: &Operator,
    rhs: &[f64],
    guess: Vec<f64>,
    opts: &SolveOptions,
) -> std::result::Result<StateField, (Error, Option<Vec<f64>>)> {
    let f = problem.nonlinearity();
    let w = opts.relaxation;
    let mut theta = guess;
    impose_dirichlet(op, rhs, &mut theta);
    let mut matrix = op.lap.clone();
    let mut last_res = f64::INFINITY;
    for it in 1..=opts.max_iters {
        for (j, t) in theta.iter().enumerate() {
            if !op.dirichlet[j] {
                matrix.diag[j] = op.lap.diag[j] + f.secant(*t);
            }
        }
        let y = matrix.solve(rhs).map_err(|e| (e, None))?;
        let mut step: f64 = 0.0;
        for (t, yk) in theta.iter_mut().zip(&y) {
            let next = w * *t + (1.0 - w) * yk;
            step = step.max((next - *t).abs());
            *t = next;
        }
        if !step.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err((Error::Diverged, None));
        }
        if step <= opts.tol_step * sup_norm(&theta).max(1.0) {
            last_res = scaled_residual_with(problem, op, rhs, &theta);
            if last_res <= opts.tol_res {
                return Ok(StateField {
                    samples: theta,
                    diagnostics: Diagnostics { iterations: it, residual: last_res, solver: SolverKind::FixedPoint },
                });
            }
        }
    }
    if last_res.is_infinite() {
        last_res = scaled_residual_with(problem, op, rhs, &theta);
    }
    Err((Error::NotConverged { iterations: opts.max_iters, residual: last_res }, Some(theta)))
}

fn newton(problem: &Problem, op: &Operator, rhs: &[f64], guess: Vec<f64>, opts: &SolveOptions) -> Result<StateField> {
    let f = problem.nonlinearity();
    let mut y = guess;
    impose_dirichlet(op, rhs, &mut y);
    let mut jac = op.lap.clone();
    let mut res = residual_vector(problem, op, rhs, &y);
    let mut res_norm = sup_norm(&res);
    let mut scaled = scaled_residual_with(problem, op, rhs, &y);
    let mut prev_step = f64::INFINITY;
    for it in 1..=opts.max_iters {
        for (j, v) in y.iter().enumerate() {
            if !op.dirichlet[j] {
                jac.diag[j] = op.lap.diag[j] + f.derivative(*v);
            }
        }
        let neg: Vec<f64> = res.iter().map(|r| -r).collect();
        let delta = jac.solve(&neg)?;
        let mut t = 1.0;
        let mut halvings = 0;
        let (trial, trial_res, trial_norm) = loop {
            let trial: Vec<f64> = y.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let r = residual_vector(problem, op, rhs, &trial);
            let norm = sup_norm(&r);
            if norm.is_finite() && (norm < res_norm || halvings >= 30) {
                break (trial, r, norm);
            }
            if halvings >= 30 {
                return Err(Error::Diverged);
            }
            t *= 0.5;
            halvings += 1;
        };
        let step = t * sup_norm(&delta);
        let accepted = trial_norm < res_norm || trial_norm <= f64::EPSILON * res_norm.max(1.0);
        if accepted {
            y = trial;
            res = trial_res;
            res_norm = trial_norm;
            scaled = scaled_residual_with(problem, op, rhs, &y);
        }
        let small_step = step <= opts.tol_step * sup_norm(&y).max(1.0);
        // stop once converged and the steps no longer shrink (round-off floor)
        let stalled = !accepted || (step >= 0.5 * prev_step && scaled <= opts.tol_res);
        if scaled <= opts.tol_res && (small_step || stalled) {
            return Ok(StateField {
                samples: y,
                diagnostics: Diagnostics { iterations: it, residual: scaled, solver: SolverKind::Newton },
            });
        }
        if !accepted {
            return Err(Error::NotConverged { iterations: it, residual: scaled });
        }
        prev_step = step;
    }
    Err(Error::NotConverged { iterations: opts.max_iters, residual: scaled })
}

/// Solve the state equation for `control`, starting from `opts.initial_guess`
/// or the cold start (linear interpolant of the boundary data).
pub fn solve_state(problem: &Problem, control: &Control, opts: &SolveOptions) -> Result<StateField> {
    solve_state_inner(problem, control, opts, opts.initial_guess.as_deref())
}

/// As [`solve_state`], warm-started from `guess`.
pub fn solve_state_warm(
    problem: &Problem,
    control: &Control,
    opts: &SolveOptions,
    guess: &[f64],
) -> Result<StateField> {
    solve_state_inner(problem, control, opts, Some(guess))
}

fn solve_state_inner(
    problem: &Problem,
    control: &Control,
    opts: &SolveOptions,
    guess: Option<&[f64]>,
) -> Result<StateField> {
    opts.validate()?;
    let n = problem.grid().len();
    let op = operator(problem);
    let rhs = source(problem, control)?;
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(StateField {
            samples: vec![0.0; n],
            diagnostics: Diagnostics { iterations: 1, residual: 0.0, solver: SolverKind::Exact },
        });
    }
    let start = match guess {
        Some(g) if g.len() == n && g.iter().all(|v| v.is_finite()) => g.to_vec(),
        Some(g) if g.len() != n => return Err(Error::DimensionMismatch { expected: n, got: g.len() }),
        _ => cold_start(problem, &rhs),
    };
    match opts.method {
        Method::FixedPoint => fixed_point(problem, &op, &rhs, start, opts).map_err(|(e, _)| e),
        Method::Newton => newton(problem, &op, &rhs, start, opts),
        Method::Auto => match fixed_point(problem, &op, &rhs, start.clone(), opts) {
            Ok(state) => Ok(state),
            Err((_, last)) => {
                let from = last.filter(|v| v.iter().all(|x| x.is_finite())).unwrap_or(start);
                newton(problem, &op, &rhs, from, opts).map(|mut s| {
                    s.diagnostics.iterations += opts.max_iters;
                    s
                })
            }
        },
    }
}

/// Jacobian of the discrete state equations with respect to the nodal state,
/// Dirichlet rows included as identity rows.
pub(crate) fn linearized(problem: &Problem, y: &[f64]) -> Tridiagonal {
    let op = operator(problem);
    let f = problem.nonlinearity();
    let mut m = op.lap;
    for (j, v) in y.iter().enumerate() {
        if !op.dirichlet[j] {
            m.diag[j] += f.derivative(*v);
        }
    }
    m
}

/// Solve `-Laplace(q) + f'(y) q = beta (y - z)` on the observation domain,
/// `q = 0` on the boundary.
pub fn solve_adjoint(problem: &Problem, state: &StateField, target: &[f64]) -> Result<AdjointField> {
    let n = problem.grid().len();
    if state.samples.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: state.samples.len() });
    }
    if target.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: target.len() });
    }
    let op = operator(problem);
    let m = linearized(problem, &state.samples);
    let beta = problem.beta();
    let rhs: Vec<f64> = (0..n)
        .map(|j| if op.dirichlet[j] { 0.0 } else { beta * (state.samples[j] - target[j]) * problem.obs_indicator()[j] })
        .collect();
    let q = m.solve(&rhs)?;
    let applied = m.apply(&q);
    let scale = 1.0 + sup_norm(&rhs).max(sup_norm(&q) * sup_norm(&m.diag));
    let residual = sup_diff(&applied, &rhs) / scale;
    debug_assert!(residual <= 1e-10, "adjoint residual {residual}");
    Ok(AdjointField {
        samples: q,
        dx: problem.grid().dx(),
        diagnostics: Diagnostics { iterations: 1, residual, solver: SolverKind::Linear },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum End {
    Left,
    Right,
}

/// Outward normal derivative at one end by the second-order one-sided stencil.
pub fn boundary_flux(samples: &[f64], dx: f64, end: End) -> Result<f64> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("flux needs at least 3 nodes (got {n})")));
    }
    Ok(match end {
        End::Left => -(-3.0 * samples[0] + 4.0 * samples[1] - samples[2]) / (2.0 * dx),
        End::Right => (3.0 * samples[n - 1] - 4.0 * samples[n - 2] + samples[n - 3]) / (2.0 * dx),
    })
}

impl AdjointField {
    pub fn flux(&self, end: End) -> Result<f64> {
        boundary_flux(&self.samples, self.dx, end)
    }
}

/// `y(x) = u cosh(sqrt(a) (x - R/2)) / cosh(sqrt(a) R/2)` on the grid: the
/// interval-boundary state for `f(y) = a y`.
pub fn solve_linear_exact(a: f64, grid: &Grid, u: f64) -> Result<StateField> {
    if !(a > 0.0) {
        return Err(Error::InvalidInput(format!("linear coefficient must be positive (got {a})")));
    }
    let k = a.sqrt();
    let half = 0.5 * grid.length();
    let samples = (0..grid.len()).map(|j| u * (k * (grid.x(j) - half)).cosh() / (k * half).cosh()).collect();
    Ok(StateField { samples, diagnostics: Diagnostics { iterations: 0, residual: 0.0, solver: SolverKind::Exact } })
}

/// Solve at `control` and return only the samples.
pub fn state_samples(problem: &Problem, control: f64, opts: &SolveOptions) -> Result<Vec<f64>> {
    Ok(solve_state(problem, &Control::Constant(control), opts)?.samples)
}
