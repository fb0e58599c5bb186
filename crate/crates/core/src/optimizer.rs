//! Adjoint gradients, first-order optimality residuals and gradient descent.
//!
//! For the discrete problem `A(y) = s(u)` with shifted cost
//! `I = cost(u) + (beta/2) sum w y^2 - beta sum w y z`, the derivative with
//! respect to the control is `dI/du = cost'(u) + lambda^T ds/du` where
//! `A'(y)^T lambda = beta W (y - z)`. Boundary control enters only the
//! Dirichlet rows, so `dI/du = sigma u + sum_b lambda_b`; this is the discrete
//! form of `sigma u - int dq/dn`. Internal control enters the rows of `(0, r)`
//! with weight `chi`, so `dI/du = u sum W_c + lambda^T chi`, the discrete form
//! of `int_0^r (u + q)`.
//!
//! The gradient is exact for the discrete cost, which is what the descent
//! line search compares against. The optimality residual also reports the
//! continuous form built from the adjoint state and its one-sided boundary
//! flux.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{roundoff_level, shifted_from_state, target_constant};
use crate::model::{Control, Problem, ProblemKind, StateField, StepTarget};
use crate::pde::{linearized, solve_adjoint, solve_state, solve_state_warm, state_residual, End, SolveOptions};

/// Cost, gradient and bookkeeping at one control.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    pub control: Control,
    pub i: f64,
    pub j: f64,
    /// `dI/du_k` for each control degree of freedom.
    pub grad: Vec<f64>,
    /// Magnitude of the two terms that cancel at a stationary point.
    pub scale: f64,
    /// Round-off level of `I`.
    pub noise: f64,
    pub state: StateField,
}

/// Cost and exact discrete gradient at `control`, from a solved state.
pub fn sensitivity_from_state(
    problem: &Problem,
    control: &Control,
    state: StateField,
    z: &[f64],
) -> Result<Sensitivity> {
    let y = &state.samples;
    let n = y.len();
    let w = problem.obs_weights();
    let beta = problem.beta();
    let g: Vec<f64> = (0..n).map(|k| beta * w[k] * (y[k] - z[k])).collect();
    let lambda = linearized(problem, y).solve_transpose(&g)?;
    let (grad, scale) = match (problem.kind(), control) {
        (ProblemKind::IntervalBoundary, Control::Constant(u)) => {
            let flux = lambda[0] + lambda[n - 1];
            let cost = problem.control_measure() * u;
            (vec![cost + flux], cost.abs() + flux.abs())
        }
        (ProblemKind::RadialBoundary, Control::Constant(u)) => {
            let cost = problem.control_measure() * u;
            (vec![cost + lambda[n - 1]], cost.abs() + lambda[n - 1].abs())
        }
        (ProblemKind::RadialInternal, Control::Constant(u)) => {
            let wc: f64 = problem.ctrl_weights().iter().sum();
            let src: f64 = problem.ctrl_indicator().iter().zip(&lambda).map(|(c, l)| c * l).sum();
            (vec![u * wc + src], (u * wc).abs() + src.abs())
        }
        (ProblemKind::RadialInternal, Control::Field(values)) => {
            let grad: Vec<f64> = values
                .iter()
                .zip(problem.ctrl_weights())
                .zip(problem.ctrl_indicator())
                .zip(&lambda)
                .map(|(((u, wc), c), l)| wc * u + c * l)
                .collect();
            let scale = values.iter().zip(problem.ctrl_weights()).map(|(u, wc)| (wc * u).abs()).sum::<f64>()
                + problem.ctrl_indicator().iter().zip(&lambda).map(|(c, l)| (c * l).abs()).sum::<f64>();
            (grad, scale)
        }
        (_, Control::Field(_)) => return Err(Error::InvalidInput("boundary problems take a constant control".into())),
    };
    let i = shifted_from_state(problem, control, y, z)?;
    let noise = roundoff_level(problem, control, y, z)?;
    Ok(Sensitivity { control: control.clone(), i, j: i + target_constant(problem, z), grad, scale, noise, state })
}

pub fn sensitivity(
    problem: &Problem,
    control: &Control,
    z: &[f64],
    opts: &SolveOptions,
    warm: Option<&[f64]>,
) -> Result<Sensitivity> {
    let state = match warm {
        Some(g) => solve_state_warm(problem, control, opts, g)?,
        None => solve_state(problem, control, opts)?,
    };
    sensitivity_from_state(problem, control, state, z)
}

/// `dJ/du` for a constant control.
pub fn gradient_constant(problem: &Problem, u: f64, target: &StepTarget) -> Result<f64> {
    let z = target.sample(problem)?;
    Ok(sensitivity(problem, &Control::Constant(u), &z, &SolveOptions::precise(), None)?.grad[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktRecord {
    /// `|dJ/du|` (constant control) or `||u + q||` on the control region (field).
    pub stationarity: f64,
    /// `stationarity` divided by the size of the cancelling terms.
    pub relative_stationarity: f64,
    /// Same condition assembled from the adjoint state: `|sigma u - int dq/dn|`
    /// with one-sided fluxes, or `|int_0^r (u + q)|`.
    pub flux_stationarity: f64,
    pub state_residual: f64,
    pub adjoint_residual: f64,
}

fn weighted_norm(weights: &[f64], v: impl Iterator<Item = f64>) -> f64 {
    weights.iter().zip(v).map(|(w, x)| w * x * x).sum::<f64>().sqrt()
}

/// First-order optimality residuals at `control`.
pub fn kkt_residual(problem: &Problem, control: &Control, target: &StepTarget) -> Result<KktRecord> {
    let z = target.sample(problem)?;
    kkt_residual_sampled(problem, control, &z)
}

pub fn kkt_residual_sampled(problem: &Problem, control: &Control, z: &[f64]) -> Result<KktRecord> {
    let s = sensitivity(problem, control, z, &SolveOptions::precise(), None)?;
    let q = solve_adjoint(problem, &s.state, z)?;
    let state_res = state_residual(problem, control, &s.state)?;
    let (stationarity, relative, flux_stat) = match (problem.kind(), control) {
        (ProblemKind::RadialInternal, Control::Field(values)) => {
            let wc = problem.ctrl_weights();
            let gap = weighted_norm(wc, values.iter().zip(&q.samples).map(|(u, q)| u + q));
            let size = weighted_norm(wc, values.iter().copied()) + weighted_norm(wc, q.samples.iter().copied());
            (gap, if size > 0.0 { gap / size } else { 0.0 }, gap)
        }
        (ProblemKind::RadialInternal, Control::Constant(u)) => {
            let g = s.grad[0].abs();
            let flux: f64 = problem.ctrl_weights().iter().zip(&q.samples).map(|(w, q)| w * (u + q)).sum();
            (g, if s.scale > 0.0 { g / s.scale } else { 0.0 }, flux.abs())
        }
        (kind, Control::Constant(u)) => {
            let g = s.grad[0].abs();
            let outward = match kind {
                ProblemKind::IntervalBoundary => q.flux(End::Left)? + q.flux(End::Right)?,
                _ => problem.control_measure() * q.flux(End::Right)?,
            };
            (g, if s.scale > 0.0 { g / s.scale } else { 0.0 }, (problem.control_measure() * u - outward).abs())
        }
        (_, Control::Field(_)) => return Err(Error::InvalidInput("boundary problems take a constant control".into())),
    };
    Ok(KktRecord {
        stationarity,
        relative_stationarity: relative,
        flux_stationarity: flux_stat,
        state_residual: state_res,
        adjoint_residual: q.diagnostics.residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOptions {
    /// Stop when `|grad| <= grad_tol * max(1, scale)`.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo: f64,
    pub initial_step: Option<f64>,
    /// Largest step as a fraction of `max(1, |u|)`; keeps descent in its basin.
    pub max_step_fraction: f64,
    /// Optional box `[a, b]` for projected steps.
    pub bounds: Option<(f64, f64)>,
    pub solve: SolveOptions,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iters: 500,
            armijo: 1e-4,
            initial_step: None,
            max_step_fraction: 0.1,
            bounds: None,
            solve: SolveOptions::precise(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    LineSearchStall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub u: f64,
    pub j: f64,
    pub i: f64,
    pub grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrajectory {
    pub iterates: Vec<Iterate>,
    pub converged: bool,
    pub reason: StopReason,
    pub final_kkt: KktRecord,
}

impl DescentTrajectory {
    pub fn last(&self) -> &Iterate {
        self.iterates.last().expect("trajectory has at least the starting point")
    }

    /// Columns `iter,u,J,grad`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,u,J,grad\n");
        for (k, it) in self.iterates.iter().enumerate() {
            let _ = writeln!(out, "{k},{},{},{}", it.u, it.j, it.grad);
        }
        out
    }
}

/// Armijo test. When the required decrease is below the round-off level of
/// `I`, a step is accepted if `I` does not rise beyond that level and the
/// gradient shrinks.
fn sufficient_decrease(cur: &Sensitivity, next: &Sensitivity, predicted: f64, grad_shrinks: bool) -> bool {
    let noise = cur.noise.max(next.noise);
    if next.i < cur.i + predicted {
        return true;
    }
    predicted.abs() <= noise && next.i <= cur.i + noise && grad_shrinks
}

fn project(u: f64, bounds: Option<(f64, f64)>) -> f64 {
    match bounds {
        Some((a, b)) => u.clamp(a, b),
        None => u,
    }
}

/// Gradient descent on a constant control with Armijo backtracking. Trial
/// steps start at twice the last accepted step and are halved until
/// `I(u + t d) <= I(u) + c t I'(u) d` holds up to the round-off level of `I`.
pub fn descend(problem: &Problem, u0: f64, target: &StepTarget, opts: &DescentOptions) -> Result<DescentTrajectory> {
    if let Some((a, b)) = opts.bounds {
        if !(a <= b) {
            return Err(Error::InvalidInput(format!("invalid bounds [{a}, {b}]")));
        }
    }
    let z = target.sample(problem)?;
    let mut u = project(u0, opts.bounds);
    let mut cur = sensitivity(problem, &Control::Constant(u), &z, &opts.solve, None)?;
    let mut iterates = vec![Iterate { u, j: cur.j, i: cur.i, grad: cur.grad[0] }];
    let mut t = opts.initial_step.unwrap_or(1.0 / problem.control_measure());
    let mut reason = StopReason::MaxIterations;
    for _ in 0..opts.max_iters {
        let g = cur.grad[0];
        let pg = u - project(u - g, opts.bounds);
        if pg.abs() <= opts.grad_tol * cur.scale.max(1.0) {
            reason = StopReason::Converged;
            break;
        }
        t *= 2.0;
        let max_step = opts.max_step_fraction * u.abs().max(1.0);
        if t * g.abs() > max_step {
            t = max_step / g.abs();
        }
        let accepted = loop {
            let trial = project(u - t * g, opts.bounds);
            let step = trial - u;
            if step.abs() < 1e-14 * u.abs().max(1.0) {
                break None;
            }
            if let Ok(next) = sensitivity(problem, &Control::Constant(trial), &z, &opts.solve, Some(&cur.state.samples))
            {
                if sufficient_decrease(&cur, &next, opts.armijo * g * step, next.grad[0].abs() < g.abs()) {
                    break Some((trial, next));
                }
            }
            t *= 0.5;
        };
        match accepted {
            Some((trial, next)) => {
                u = trial;
                cur = next;
                iterates.push(Iterate { u, j: cur.j, i: cur.i, grad: cur.grad[0] });
            }
            None => {
                reason = StopReason::LineSearchStall;
                break;
            }
        }
    }
    let final_kkt = kkt_residual_sampled(problem, &Control::Constant(u), &z)?;
    Ok(DescentTrajectory { iterates, converged: reason == StopReason::Converged, reason, final_kkt })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldIterate {
    pub j: f64,
    pub i: f64,
    /// `||u + q||` on the control region.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTrajectory {
    pub iterates: Vec<FieldIterate>,
    pub converged: bool,
    pub reason: StopReason,
    pub final_kkt: KktRecord,
}

/// Descent for a control field on `(0, r)` along `-(u + q)`; the line search
/// uses the exact discrete derivative in that direction.
pub fn descend_field(
    problem: &Problem,
    u0: &[f64],
    target: &StepTarget,
    opts: &DescentOptions,
) -> Result<(Vec<f64>, FieldTrajectory)> {
    if problem.kind() != ProblemKind::RadialInternal {
        return Err(Error::InvalidInput("field descent needs an internal-control problem".into()));
    }
    if u0.len() != problem.ctrl_len() {
        return Err(Error::DimensionMismatch { expected: problem.ctrl_len(), got: u0.len() });
    }
    let z = target.sample(problem)?;
    let wc = problem.ctrl_weights().to_vec();
    let riesz = |u: &[f64], s: &Sensitivity| -> Result<(Vec<f64>, f64, f64)> {
        let q = solve_adjoint(problem, &s.state, &z)?;
        let d: Vec<f64> = u.iter().zip(&q.samples).map(|(u, q)| u + q).collect();
        let norm = weighted_norm(&wc, d.iter().copied());
        let size = weighted_norm(&wc, u.iter().copied()) + weighted_norm(&wc, q.samples[..u.len()].iter().copied());
        Ok((d, norm, size))
    };
    let mut u = u0.iter().map(|&v| project(v, opts.bounds)).collect::<Vec<_>>();
    let mut cur = sensitivity(problem, &Control::Field(u.clone()), &z, &opts.solve, None)?;
    let (mut dir, mut norm, mut size) = riesz(&u, &cur)?;
    let mut iterates = vec![FieldIterate { j: cur.j, i: cur.i, grad_norm: norm }];
    let mut t: f64 = opts.initial_step.unwrap_or(1.0);
    let mut reason = StopReason::MaxIterations;
    for _ in 0..opts.max_iters {
        if norm <= opts.grad_tol * size.max(1.0) {
            reason = StopReason::Converged;
            break;
        }
        t = (2.0 * t).min(1.0);
        let accepted = loop {
            let trial: Vec<f64> = u.iter().zip(&dir).map(|(u, d)| project(u - t * d, opts.bounds)).collect();
            let step_norm = trial.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if step_norm < 1e-14 * u.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
                break None;
            }
            let slope: f64 = cur.grad.iter().zip(trial.iter().zip(&u)).map(|(g, (a, b))| g * (a - b)).sum();
            let control = Control::Field(trial.clone());
            if let Ok(next) = sensitivity(problem, &control, &z, &opts.solve, Some(&cur.state.samples)) {
                let (_, next_norm, _) = riesz(&trial, &next)?;
                if sufficient_decrease(&cur, &next, opts.armijo * slope, next_norm < norm) {
                    break Some((trial, next));
                }
            }
            t *= 0.5;
        };
        match accepted {
            Some((trial, next)) => {
                u = trial;
                cur = next;
                (dir, norm, size) = riesz(&u, &cur)?;
                iterates.push(FieldIterate { j: cur.j, i: cur.i, grad_norm: norm });
            }
            None => {
                reason = StopReason::LineSearchStall;
                break;
            }
        }
    }
    let final_kkt = kkt_residual_sampled(problem, &Control::Field(u.clone()), &z)?;
    Ok((u, FieldTrajectory { iterates, converged: reason == StopReason::Converged, reason, final_kkt }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::eval_j;
    use crate::model::Nonlinearity;

    fn fd(problem: &Problem, u: f64, z: &StepTarget) -> f64 {
        let d = 1e-4 * u.abs().max(1.0);
        let o = SolveOptions::precise();
        let jp = crate::functional::eval_i(problem, &Control::Constant(u + d), z, &o).unwrap();
        let jm = crate::functional::eval_i(problem, &Control::Constant(u - d), z, &o).unwrap();
        (jp - jm) / (2.0 * d)
    }

    #[test]
    fn zero_problem_has_zero_gradient() {
        let p = Problem::cubic_interval(101);
        assert_eq!(gradient_constant(&p, 0.0, &StepTarget::zero()).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = Problem::cubic_interval(201);
        let z = StepTarget::three_level(0.3, 0.6, 40.0, -25.0);
        for u in [-30.0, -1.0, 0.5, 7.0, 60.0] {
            let g = gradient_constant(&p, u, &z).unwrap();
            let f = fd(&p, u, &z);
            assert!((g - f).abs() <= 1e-4 * f.abs().max(1e-8), "u = {u}: {g} vs {f}");
        }
    }

    #[test]
    fn gradient_matches_finite_difference_radial_and_internal() {
        let z = StepTarget::three_level(0.5, 0.8, 10.0, -5.0);
        for n in 1..=3 {
            let p = Problem::new(ProblemKind::RadialBoundary, n, 1.0, None, 1.0, Nonlinearity::cubic(), 201).unwrap();
            let (g, f) = (gradient_constant(&p, 3.0, &z).unwrap(), fd(&p, 3.0, &z));
            assert!((g - f).abs() <= 1e-4 * f.abs(), "boundary n = {n}: {g} vs {f}");
            let p =
                Problem::new(ProblemKind::RadialInternal, n, 1.0, Some(0.25), 1.0, Nonlinearity::cubic(), 201).unwrap();
            let (g, f) = (gradient_constant(&p, 3.0, &z).unwrap(), fd(&p, 3.0, &z));
            assert!((g - f).abs() <= 1e-4 * f.abs(), "internal n = {n}: {g} vs {f}");
        }
    }

    #[test]
    fn flux_form_approximates_discrete_gradient() {
        let p = Problem::cubic_interval(1001);
        let z = StepTarget::three_level(0.25, 0.75, 4.0, -2.0);
        let k = kkt_residual(&p, &Control::Constant(1.5), &z).unwrap();
        assert!((k.stationarity - k.flux_stationarity).abs() <= 1e-3 * k.stationarity, "{k:?}");
        assert!(k.state_residual < 1e-6 && k.adjoint_residual < 1e-10);
    }

    #[test]
    fn zero_control_nonzero_target_is_not_stationary() {
        let p = Problem::cubic_interval(201);
        let k = kkt_residual(&p, &Control::Constant(0.0), &StepTarget::constant(3.0)).unwrap();
        // y = 0: q solves -q'' = -3 with q(0) = q(1) = 0, outward flux 3/2 at each end
        assert!((k.flux_stationarity - 3.0).abs() < 1e-9, "{k:?}");
        assert!(k.stationarity > 1.0);
    }

    #[test]
    fn descent_reaches_minimum_and_decreases() {
        let p = Problem::cubic_interval(201);
        let z = StepTarget::constant(5.0);
        let tr = descend(&p, 0.0, &z, &DescentOptions::default()).unwrap();
        assert!(tr.converged, "{:?}", tr.reason);
        for w in tr.iterates.windows(2) {
            assert!(w[1].i < w[0].i);
        }
        assert!(tr.final_kkt.relative_stationarity <= 1e-5);
        let j_min = eval_j(&p, &Control::Constant(tr.last().u), &z, &SolveOptions::precise()).unwrap();
        for du in [-1e-2, 1e-2] {
            assert!(eval_j(&p, &Control::Constant(tr.last().u + du), &z, &SolveOptions::precise()).unwrap() > j_min);
        }
    }

    #[test]
    fn projected_descent_stops_on_bound() {
        let p = Problem::cubic_interval(101);
        let opts = DescentOptions { bounds: Some((-1.0, 0.5)), ..Default::default() };
        let tr = descend(&p, 0.0, &StepTarget::constant(5.0), &opts).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.last().u, 0.5);
    }

    #[test]
    fn field_descent_zero_problem() {
        let p = Problem::new(ProblemKind::RadialInternal, 1, 1.0, Some(0.25), 1.0, Nonlinearity::cubic(), 101).unwrap();
        let (u, tr) =
            descend_field(&p, &vec![0.0; p.ctrl_len()], &StepTarget::zero(), &DescentOptions::default()).unwrap();
        assert!(tr.converged && tr.iterates.len() == 1);
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn field_descent_self_consistent_target() {
        let p = Problem::new(ProblemKind::RadialInternal, 1, 1.0, Some(0.25), 1.0, Nonlinearity::cubic(), 101).unwrap();
        let c = 4.0;
        let y = solve_state(&p, &Control::Constant(c), &SolveOptions::precise()).unwrap();
        let z = StepTarget::from_observed(&p, &y.samples).unwrap();
        let opts = DescentOptions { grad_tol: 1e-6, max_iters: 2000, ..Default::default() };
        let (_, tr) = descend_field(&p, &vec![c; p.ctrl_len()], &z, &opts).unwrap();
        assert!(tr.converged, "{:?} after {}", tr.reason, tr.iterates.len());
        for w in tr.iterates.windows(2) {
            assert!(w[1].i <= w[0].i + 1e-9 * w[0].i.abs());
        }
        assert!(tr.final_kkt.relative_stationarity <= 1e-5);
    }

    #[test]
    fn field_and_constant_gradients_agree() {
        let p = Problem::new(ProblemKind::RadialInternal, 1, 1.0, Some(0.25), 1.0, Nonlinearity::cubic(), 101).unwrap();
        let z = StepTarget::constant(2.0).sample(&p).unwrap();
        let a = sensitivity(&p, &Control::Constant(1.5), &z, &SolveOptions::precise(), None).unwrap();
        let b = sensitivity(&p, &Control::Field(vec![1.5; p.ctrl_len()]), &z, &SolveOptions::precise(), None).unwrap();
        let sum: f64 = b.grad.iter().sum();
        assert!((a.grad[0] - sum).abs() <= 1e-12 * sum.abs());
    }
}
