//! Construction of targets whose cost has two global minimizers of opposite
//! sign over constant controls.
//!
//! Two positive controls `u1 < u2` give states `G(u1)`, `G(u2)` whose
//! pointwise ratio is not constant when `f` is nonlinear. With
//! `lambda = int G(u2) / int G(u1)`, the observation nodes split into
//! `omega1 = {G(u2) < lambda G(u1)}` and `omega2 = {G(u2) > lambda G(u1)}`.
//! A two-level target `z = z1 on omega1, z2 on omega2` is then chosen so that
//! `I(u_minus, z) = I(u_plus_i, z) = -1`, a 2x2 linear system whose matrix
//! holds the integrals of the two states over the two sets. Both half-line
//! infima are then negative, and adding a constant to `z` moves them in
//! opposite directions, so bisection on that constant balances them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{eval_halfline_inf, shifted_from_state, HalfLineInfimum, HalfLineOptions, Side};
use crate::model::{Control, Problem, StepTarget};
use crate::pde::{solve_state, SolveOptions};

pub const DEFAULT_CROSSING_TOL: f64 = 1e-6;
pub const DEFAULT_DET_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaPartition {
    pub lambda_bar: f64,
    pub omega1: Vec<usize>,
    pub omega2: Vec<usize>,
    /// Observation nodes within the crossing band.
    pub excluded: Vec<usize>,
    pub crossing_tol: f64,
    #[serde(skip)]
    pub state1: Vec<f64>,
    #[serde(skip)]
    pub state2: Vec<f64>,
}

fn observed(problem: &Problem) -> impl Iterator<Item = usize> + '_ {
    problem.obs_indicator().iter().enumerate().filter(|(_, &c)| c > 0.0).map(|(j, _)| j)
}

fn precise_state(problem: &Problem, u: f64) -> Result<Vec<f64>> {
    Ok(solve_state(problem, &Control::Constant(u), &SolveOptions::precise())?.samples)
}

/// Split the observation nodes by the sign of `G(u2) - lambda G(u1)`. Nodes
/// where `|G(u2) - lambda G(u1)| <= crossing_tol ||G(u2)||_inf` are excluded.
pub fn partition_omegas(problem: &Problem, u_plus_1: f64, u_plus_2: f64, crossing_tol: f64) -> Result<OmegaPartition> {
    if !(0.0 < u_plus_1 && u_plus_1 < u_plus_2) {
        return Err(Error::InvalidInput(format!("need 0 < u_plus_1 < u_plus_2 (got {u_plus_1}, {u_plus_2})")));
    }
    if !(crossing_tol >= 0.0) {
        return Err(Error::InvalidInput("crossing_tol must be nonnegative".into()));
    }
    let g1 = precise_state(problem, u_plus_1)?;
    let g2 = precise_state(problem, u_plus_2)?;
    let w = problem.obs_weights();
    let int1: f64 = w.iter().zip(&g1).map(|(w, y)| w * y).sum();
    let int2: f64 = w.iter().zip(&g2).map(|(w, y)| w * y).sum();
    assert!(int1 > 0.0 && int2 > 0.0, "positive controls give positive states");
    let lambda_bar = int2 / int1;
    let band = crossing_tol * g2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut omega1, mut omega2, mut excluded) = (vec![], vec![], vec![]);
    for j in observed(problem) {
        let d = g2[j] - lambda_bar * g1[j];
        if d.abs() <= band {
            excluded.push(j);
        } else if d < 0.0 {
            omega1.push(j);
        } else {
            omega2.push(j);
        }
    }
    if omega1.is_empty() && omega2.is_empty() {
        return Err(Error::AffineMap(format!("G({u_plus_2}) = {lambda_bar} G({u_plus_1}) at every observation node")));
    }
    if omega1.is_empty() || omega2.is_empty() {
        return Err(Error::Degenerate(format!(
            "one of the sets omega1/omega2 is empty ({} / {} nodes); choose another pair of positive controls",
            omega1.len(),
            omega2.len()
        )));
    }
    Ok(OmegaPartition { lambda_bar, omega1, omega2, excluded, crossing_tol, state1: g1, state2: g2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCertificate {
    pub gamma: [[f64; 2]; 2],
    pub det: f64,
    /// `det_tol` times the product of the row norms.
    pub det_threshold: f64,
    pub chosen_i: usize,
    /// Determinants of every attempted system, in order.
    pub attempts: Vec<(usize, f64)>,
    pub c1: f64,
    pub c2: f64,
    pub z_values: (f64, f64),
    pub i_minus: f64,
    pub i_plus: f64,
}

fn weighted_sum(w: &[f64], y: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&j| w[j] * y[j]).sum()
}

/// Two-level target with `I(u_minus, z) = I(u_plus_i, z) = -1` on the grid.
pub fn construct_seed_target(
    problem: &Problem,
    u_minus: f64,
    u_plus: (f64, f64),
    crossing_tol: f64,
    det_tol: f64,
) -> Result<(StepTarget, GammaCertificate)> {
    if !(u_minus < 0.0) {
        return Err(Error::InvalidInput(format!("u_minus must be negative (got {u_minus})")));
    }
    let part = partition_omegas(problem, u_plus.0, u_plus.1, crossing_tol)?;
    let g_minus = precise_state(problem, u_minus)?;
    let w = problem.obs_weights();
    let beta = problem.beta();
    let rhs = |u: f64, y: &[f64]| -> f64 {
        let quad: f64 = w.iter().zip(y).map(|(w, y)| w * y * y).sum();
        problem.constant_control_cost(u) + 0.5 * beta * quad + 1.0
    };
    let row = |y: &[f64]| [beta * weighted_sum(w, y, &part.omega1), beta * weighted_sum(w, y, &part.omega2)];
    let mut attempts = Vec::new();
    for (i, u_p, g_p) in [(1, u_plus.0, &part.state1), (2, u_plus.1, &part.state2)] {
        let gamma = [row(&g_minus), row(g_p)];
        let det = gamma[0][0] * gamma[1][1] - gamma[0][1] * gamma[1][0];
        let norms = gamma.iter().map(|r| r[0].hypot(r[1])).product::<f64>();
        let threshold = det_tol * norms;
        attempts.push((i, det));
        if det.abs() <= threshold {
            continue;
        }
        let c1 = rhs(u_minus, &g_minus);
        let c2 = rhs(u_p, g_p);
        let z1 = (c1 * gamma[1][1] - c2 * gamma[0][1]) / det;
        let z2 = (gamma[0][0] * c2 - gamma[1][0] * c1) / det;
        let mut nodal = vec![0.0; problem.grid().len()];
        for &j in &part.omega1 {
            nodal[j] = z1;
        }
        for &j in &part.omega2 {
            nodal[j] = z2;
        }
        let target = StepTarget::from_observed(problem, &nodal)?;
        let z = target.sample(problem)?;
        let i_minus = shifted_from_state(problem, &Control::Constant(u_minus), &g_minus, &z)?;
        let i_plus = shifted_from_state(problem, &Control::Constant(u_p), g_p, &z)?;
        if !(i_minus < 0.0 && i_plus < 0.0) {
            return Err(Error::Certificate(format!(
                "seed target does not make both values negative: I(u-) = {i_minus:e}, I(u+) = {i_plus:e}"
            )));
        }
        let cert = GammaCertificate {
            gamma,
            det,
            det_threshold: threshold,
            chosen_i: i,
            attempts,
            c1,
            c2,
            z_values: (z1, z2),
            i_minus,
            i_plus,
        };
        return Ok((target, cert));
    }
    Err(Error::Degenerate(format!(
        "both 2x2 systems are numerically singular (determinants {:?}); reduce crossing_tol or refine the grid",
        attempts
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    /// Relative tolerance on `|h1 - h2|`.
    pub tol: f64,
    pub max_iters: usize,
    pub halfline: HalfLineOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iters: 60, halfline: HalfLineOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub mu: f64,
    pub h1: f64,
    pub h2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target: StepTarget,
    /// Shift applied to every step value (negative for the mirrored case).
    pub mu1: f64,
    pub h1: f64,
    pub h2: f64,
    pub argmin1: f64,
    pub argmin2: f64,
    pub iterations: usize,
    /// `g(0)` and `g(mu0)` with `g = h2 - h1` along the chosen shift direction.
    pub endpoint_values: (f64, f64),
    pub mu0: f64,
    pub transcript: Vec<CalibrationStep>,
}

fn infima(
    problem: &Problem,
    target: &StepTarget,
    opts: &HalfLineOptions,
) -> Result<(HalfLineInfimum, HalfLineInfimum)> {
    let (a, b) = rayon::join(
        || eval_halfline_inf(problem, target, Side::Nonpositive, opts),
        || eval_halfline_inf(problem, target, Side::Nonnegative, opts),
    );
    Ok((a?, b?))
}

fn balanced(h1: f64, h2: f64, tol: f64) -> bool {
    (h1 - h2).abs() <= tol * h1.abs().max(h2.abs())
}

/// Shift `z0` by a constant until the two half-line infima agree.
pub fn calibrate_target(problem: &Problem, z0: &StepTarget, opts: &CalibrationOptions) -> Result<CalibrationReport> {
    let (n1, p1) = infima(problem, z0, &opts.halfline)?;
    if !(n1.h < 0.0 && p1.h < 0.0) {
        return Err(Error::Certificate(format!(
            "calibration needs both half-line infima negative (h1 = {:e}, h2 = {:e})",
            n1.h, p1.h
        )));
    }
    let mu0 = z0.sup_norm();
    let mut transcript = vec![CalibrationStep { mu: 0.0, h1: n1.h, h2: p1.h }];
    if balanced(n1.h, p1.h, opts.tol) {
        return Ok(CalibrationReport {
            target: z0.clone(),
            mu1: 0.0,
            h1: n1.h,
            h2: p1.h,
            argmin1: n1.argmin,
            argmin2: p1.argmin,
            iterations: 0,
            endpoint_values: (p1.h - n1.h, p1.h - n1.h),
            mu0,
            transcript,
        });
    }
    // raising z favours positive controls; lowering it favours negative ones
    let sign = if n1.h < p1.h { 1.0 } else { -1.0 };
    let g_start = sign * (p1.h - n1.h);
    let (e1, e2) = infima(problem, &z0.shifted(sign * mu0), &opts.halfline)?;
    transcript.push(CalibrationStep { mu: sign * mu0, h1: e1.h, h2: e2.h });
    let g_end = sign * (e2.h - e1.h);
    if g_end.signum() == g_start.signum() {
        return Err(Error::NoSignChange { g_lo: g_start, g_hi: g_end });
    }
    let (mut lo, mut hi) = (0.0, mu0);
    for it in 1..=opts.max_iters {
        let mu = 0.5 * (lo + hi);
        let target = z0.shifted(sign * mu);
        let (a, b) = infima(problem, &target, &opts.halfline)?;
        transcript.push(CalibrationStep { mu: sign * mu, h1: a.h, h2: b.h });
        if balanced(a.h, b.h, opts.tol) && a.h < 0.0 && b.h < 0.0 {
            return Ok(CalibrationReport {
                target,
                mu1: sign * mu,
                h1: a.h,
                h2: b.h,
                argmin1: a.argmin,
                argmin2: b.argmin,
                iterations: it,
                endpoint_values: (g_start, g_end),
                mu0,
                transcript,
            });
        }
        if (sign * (b.h - a.h)).signum() == g_start.signum() {
            lo = mu;
        } else {
            hi = mu;
        }
    }
    let last = transcript.last().expect("transcript is never empty");
    Err(Error::NotConverged { iterations: opts.max_iters, residual: (last.h1 - last.h2).abs() })
}
