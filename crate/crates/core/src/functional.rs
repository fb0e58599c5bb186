//! The tracking cost `J`, its shifted form `I = J - (beta/2) ||z||^2`, and the
//! infima of `I` over nonpositive and nonnegative constant controls.
//!
//! `I` is assembled directly as
//! `cost(u) + (beta/2) sum w y^2 - beta sum w y z` so that it does not suffer
//! cancellation against the large constant `(beta/2) ||z||^2`. `J` adds that
//! constant back with the same quadrature weights, so `I(0) = 0` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Control, Problem, StateField, StepTarget};
use crate::pde::{solve_state, solve_state_warm, SolveOptions};
use crate::search::golden_section;

/// Control cost `1/2 int |u|^2` over the control set.
pub fn control_cost(problem: &Problem, control: &Control) -> Result<f64> {
    match control {
        Control::Constant(u) => Ok(problem.constant_control_cost(*u)),
        Control::Field(values) => {
            let w = problem.ctrl_weights();
            if values.len() != w.len() || w.is_empty() {
                return Err(Error::DimensionMismatch { expected: w.len(), got: values.len() });
            }
            Ok(0.5 * w.iter().zip(values).map(|(w, u)| w * u * u).sum::<f64>())
        }
    }
}

/// `(beta/2) ||z||^2` by the trapezoid weights of the observation domain.
pub fn target_constant(problem: &Problem, z: &[f64]) -> f64 {
    0.5 * problem.beta() * problem.target_norm_sq_quadrature(z)
}

/// `I` from a solved state.
pub fn shifted_from_state(problem: &Problem, control: &Control, y: &[f64], z: &[f64]) -> Result<f64> {
    let n = problem.grid().len();
    if y.len() != n || z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: if y.len() != n { y.len() } else { z.len() } });
    }
    let w = problem.obs_weights();
    let mut quad = 0.0;
    let mut cross = 0.0;
    for j in 0..n {
        quad += w[j] * y[j] * y[j];
        cross += w[j] * y[j] * z[j];
    }
    Ok(control_cost(problem, control)? + 0.5 * problem.beta() * quad - problem.beta() * cross)
}

/// Round-off level of `I` as computed by [`shifted_from_state`]: a small
/// multiple of machine epsilon times the sum of the magnitudes of its terms.
pub fn roundoff_level(problem: &Problem, control: &Control, y: &[f64], z: &[f64]) -> Result<f64> {
    let w = problem.obs_weights();
    let beta = problem.beta();
    let mut mag = control_cost(problem, control)?.abs();
    for k in 0..y.len().min(z.len()) {
        mag += 0.5 * beta * w[k] * y[k] * y[k] + beta * w[k] * (y[k] * z[k]).abs();
    }
    Ok(256.0 * f64::EPSILON * mag)
}

/// `J(u, z)` with trapezoid quadrature.
pub fn eval_j(problem: &Problem, control: &Control, target: &StepTarget, opts: &SolveOptions) -> Result<f64> {
    let z = target.sample(problem)?;
    Ok(eval_i_sampled(problem, control, &z, opts)?.0 + target_constant(problem, &z))
}

/// `I(u, z) = J(u, z) - (beta/2) ||z||^2`.
pub fn eval_i(problem: &Problem, control: &Control, target: &StepTarget, opts: &SolveOptions) -> Result<f64> {
    let z = target.sample(problem)?;
    Ok(eval_i_sampled(problem, control, &z, opts)?.0)
}

fn eval_i_sampled(problem: &Problem, control: &Control, z: &[f64], opts: &SolveOptions) -> Result<(f64, StateField)> {
    let state = solve_state(problem, control, opts)?;
    let i = shifted_from_state(problem, control, &state.samples, z)?;
    Ok((i, state))
}

/// Composite Simpson value of `(beta/2) int (y - z)^2` over the observation
/// domain; cross-check for the trapezoid rule on smooth integrands.
pub fn simpson_tracking(problem: &Problem, y: &[f64], z: &[f64]) -> Result<f64> {
    let n = problem.grid().len();
    if y.len() != n || z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len().min(z.len()) });
    }
    let start = problem.interface_index().unwrap_or(0);
    let intervals = n - 1 - start;
    if !intervals.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("Simpson's rule needs an even number of intervals (got {intervals})")));
    }
    let h = problem.grid().dx();
    // trapezoid weight / h recovers the radial measure factor at each node
    let measure: Vec<f64> = (0..n)
        .map(|j| {
            let x = problem.grid().x(j);
            match problem.kind() {
                crate::model::ProblemKind::IntervalBoundary => 1.0,
                _ => {
                    problem.dim() as f64
                        * crate::model::unit_ball_volume(problem.dim())
                        * x.powi(problem.dim() as i32 - 1)
                }
            }
        })
        .collect();
    let mut sum = 0.0;
    for j in start..n {
        let k = j - start;
        let c = if k == 0 || j == n - 1 {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = y[j] - z[j];
        sum += c * measure[j] * d * d;
    }
    Ok(0.5 * problem.beta() * sum * h / 3.0)
}

/// Solves along a sequence of constant controls, warm-starting each solve
/// from the previous converged state.
pub struct Evaluator<'a> {
    problem: &'a Problem,
    z: Vec<f64>,
    constant: f64,
    opts: SolveOptions,
    warm: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub u: f64,
    pub i: f64,
    pub j: f64,
    pub state: StateField,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a Problem, target: &StepTarget, opts: SolveOptions) -> Result<Self> {
        let z = target.sample(problem)?;
        Ok(Self::from_samples(problem, z, opts))
    }

    pub fn from_samples(problem: &'a Problem, z: Vec<f64>, opts: SolveOptions) -> Self {
        let constant = target_constant(problem, &z);
        Self { problem, z, constant, opts, warm: None }
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn samples(&self) -> &[f64] {
        &self.z
    }

    /// `(beta/2) ||z||^2` in the quadrature used for `J`.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn options(&self) -> &SolveOptions {
        &self.opts
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn eval(&mut self, u: f64) -> Result<Evaluation> {
        let control = Control::Constant(u);
        let state = match &self.warm {
            Some(g) => solve_state_warm(self.problem, &control, &self.opts, g),
            None => solve_state(self.problem, &control, &self.opts),
        }?;
        self.warm = Some(state.samples.clone());
        self.finish(u, state)
    }

    /// Solve from the cold start, leaving the warm state untouched.
    pub fn eval_cold(&self, u: f64) -> Result<Evaluation> {
        let state = solve_state(self.problem, &Control::Constant(u), &self.opts)?;
        self.finish(u, state)
    }

    fn finish(&self, u: f64, state: StateField) -> Result<Evaluation> {
        let i = shifted_from_state(self.problem, &Control::Constant(u), &state.samples, &self.z)?;
        Ok(Evaluation { u, i, j: i + self.constant, state })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Nonpositive,
    Nonnegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfLineOptions {
    pub probes: usize,
    pub solve: SolveOptions,
}

impl Default for HalfLineOptions {
    fn default() -> Self {
        Self { probes: 400, solve: SolveOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfLineInfimum {
    pub h: f64,
    pub argmin: f64,
    pub bracket: (f64, f64),
    pub refined: bool,
    pub failed_probes: Vec<f64>,
}

/// Probe controls on one half-line: `s * B * (i/N)^3`, dense near zero where
/// the basins of moderate targets sit, sparse near the bound.
pub fn halfline_probes(bound: f64, side: Side, probes: usize) -> Vec<f64> {
    let s = match side {
        Side::Nonpositive => -1.0,
        Side::Nonnegative => 1.0,
    };
    let n = probes.max(2) as f64;
    (0..=probes.max(2)).map(|i| s * bound * (i as f64 / n).powi(3)).collect()
}

/// Infimum of `I(., z)` over the chosen half-line of constant controls,
/// searched on `[-B, 0]` or `[0, B]` with `B = 1.1 sqrt(beta/sigma) ||z||`.
pub fn eval_halfline_inf(
    problem: &Problem,
    target: &StepTarget,
    side: Side,
    opts: &HalfLineOptions,
) -> Result<HalfLineInfimum> {
    let bound = 1.1 * problem.minimizer_bound(target);
    let bracket = match side {
        Side::Nonpositive => (-bound, 0.0),
        Side::Nonnegative => (0.0, bound),
    };
    if bound == 0.0 {
        return Ok(HalfLineInfimum { h: 0.0, argmin: 0.0, bracket, refined: false, failed_probes: vec![] });
    }
    let controls = halfline_probes(bound, side, opts.probes);
    let mut eval = Evaluator::new(problem, target, opts.solve.clone())?;
    let mut values: Vec<Option<f64>> = Vec::with_capacity(controls.len());
    let mut failed = Vec::new();
    for &u in &controls {
        match eval.eval(u) {
            Ok(e) => values.push(Some(e.i)),
            Err(_) => {
                failed.push(u);
                values.push(None);
            }
        }
    }
    if failed.len() * 10 > controls.len() {
        return Err(Error::TooManyFailures { failed: failed.len(), total: controls.len() });
    }
    let (best, best_i) = values
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });

    let lo_k = best.saturating_sub(1);
    let hi_k = (best + 1).min(controls.len() - 1);
    let (a, b) = {
        let (p, q) = (controls[lo_k], controls[hi_k]);
        (p.min(q), p.max(q))
    };
    if b - a == 0.0 {
        return Ok(HalfLineInfimum {
            h: best_i,
            argmin: controls[best],
            bracket,
            refined: false,
            failed_probes: failed,
        });
    }
    let mut local = Evaluator::new(problem, target, opts.solve.clone())?;
    let golden = golden_section(|u| local.eval(u).map(|e| e.i), a, b, 1e-6 * (b - a));
    let (h, argmin, refined) = match golden {
        Ok(g) if g.fx < best_i => (g.fx, g.x, true),
        _ => (best_i, controls[best], false),
    };
    Ok(HalfLineInfimum { h, argmin, bracket, refined, failed_probes: failed })
}
