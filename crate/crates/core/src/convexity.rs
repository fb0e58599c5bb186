//! Second differences of the cost along a control direction and targets that
//! make them negative.
//!
//! With states fixed, `I(u, z)` is affine in `z`. Taking
//! `z_k = k w` with `w = (G(u+hv) - 2G(u) + G(u-hv)) / h^2` gives
//! `d2J(k) = c1 - k c2`, where `c1` is the second difference at `z = 0` and
//! `c2 = beta ||w||^2`. Any `k > c1/c2` therefore breaks convexity, provided
//! `w != 0`, which is exactly the case of a control-to-state map that is not
//! affine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{roundoff_level, shifted_from_state, target_constant};
use crate::model::{Control, Problem, StepTarget};
use crate::pde::{solve_state, SolveOptions};

fn states(problem: &Problem, u: f64, dv: f64) -> Result<[Vec<f64>; 3]> {
    let opts = SolveOptions::precise();
    let solve = |c: f64| -> Result<Vec<f64>> { Ok(solve_state(problem, &Control::Constant(c), &opts)?.samples) };
    Ok([solve(u - dv)?, solve(u)?, solve(u + dv)?])
}

fn second_difference(problem: &Problem, u: f64, dv: f64, h: f64, ys: &[Vec<f64>; 3], z: &[f64]) -> Result<f64> {
    let i = |c: f64, y: &[f64]| shifted_from_state(problem, &Control::Constant(c), y, z);
    Ok((i(u + dv, &ys[2])? - 2.0 * i(u, &ys[1])? + i(u - dv, &ys[0])?) / (h * h))
}

/// `(J(u+hv) - 2J(u) + J(u-hv)) / h^2`, evaluated through `I` so that the
/// constant `(beta/2)||z||^2` cancels exactly.
pub fn directional_second_difference(problem: &Problem, u: f64, v: f64, h: f64, target: &StepTarget) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h must be positive (got {h})")));
    }
    let z = target.sample(problem)?;
    let ys = states(problem, u, h * v)?;
    second_difference(problem, u, h * v, h, &ys, &z)
}

pub fn default_step(u: f64) -> f64 {
    1e-3 * u.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub target: StepTarget,
    pub k: f64,
    pub d2j: f64,
    /// `c1 / c2`: amplitudes above this make the second difference negative.
    pub k_star: f64,
    pub c1: f64,
    pub c2: f64,
    /// Sup norm of the second difference of the states.
    pub w_norm: f64,
    pub u: f64,
    pub v: f64,
    pub h: f64,
    /// `k < k_star`: the target is too weak to break convexity.
    pub below_threshold: bool,
}

/// Target `k w` and the second difference of the cost it produces. With
/// `k = None` the amplitude is `2 k_star`.
pub fn build_nonconvexity_witness(problem: &Problem, u: f64, v: f64, h: f64, k: Option<f64>) -> Result<Witness> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h must be positive (got {h})")));
    }
    if u == 0.0 && v == 0.0 {
        return Err(Error::InvalidInput("need u != 0 or v != 0".into()));
    }
    if !problem.nonlinearity().curvature_mode() {
        return Err(Error::AffineMap("f is linear, so every cost is convex and no witness exists".into()));
    }
    let dv = h * v;
    let ys = states(problem, u, dv)?;
    let n = ys[0].len();
    let w: Vec<f64> = (0..n).map(|j| (ys[2][j] - 2.0 * ys[1][j] + ys[0][j]) / (h * h)).collect();
    let w_norm = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let state_size = ys.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    if w_norm * h * h <= 1e3 * f64::EPSILON * state_size {
        return Err(Error::AffineMap(format!(
            "second difference of the states is at round-off level ({w_norm:e}); G is affine along this direction"
        )));
    }
    let zero = vec![0.0; n];
    let c1 = second_difference(problem, u, dv, h, &ys, &zero)?;
    let c2 = problem.beta() * problem.target_norm_sq_quadrature(&w);
    let k_star = c1 / c2;
    let k = k.unwrap_or(2.0 * k_star.max(0.0));
    let nodal: Vec<f64> = w.iter().map(|x| k * x).collect();
    let target = StepTarget::from_observed(problem, &nodal)?;
    let z = target.sample(problem)?;
    let d2j = second_difference(problem, u, dv, h, &ys, &z)?;
    Ok(Witness { target, k, d2j, k_star, c1, c2, w_norm, u, v, h, below_threshold: k < k_star })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidpointVerdict {
    /// `J((u_a + u_b)/2)`.
    pub lhs: f64,
    /// `(J(u_a) + J(u_b))/2`.
    pub rhs: f64,
    /// `lhs - rhs`, computed through `I`.
    pub gap: f64,
    pub slack: f64,
    pub violated: bool,
}

/// Midpoint convexity check. The gap is computed through `I` and compared
/// against `1e-8` times the size of the `I` values (plus their round-off
/// level), since `J` differs from `I` only by a constant.
pub fn midpoint_convexity_test(problem: &Problem, u_a: f64, u_b: f64, target: &StepTarget) -> Result<MidpointVerdict> {
    let z = target.sample(problem)?;
    let opts = SolveOptions::precise();
    let eval = |c: f64| -> Result<(f64, f64)> {
        let control = Control::Constant(c);
        let y = solve_state(problem, &control, &opts)?;
        Ok((shifted_from_state(problem, &control, &y.samples, &z)?, roundoff_level(problem, &control, &y.samples, &z)?))
    };
    let mid = 0.5 * (u_a + u_b);
    let ((i_a, e_a), (i_m, e_m), (i_b, e_b)) = (eval(u_a)?, eval(mid)?, eval(u_b)?);
    let constant = target_constant(problem, &z);
    let avg = 0.5 * (i_a + i_b);
    let gap = i_m - avg;
    let slack = 1e-8 * i_m.abs().max(avg.abs()) + e_a.max(e_m).max(e_b);
    Ok(MidpointVerdict { lhs: i_m + constant, rhs: avg + constant, gap, slack, violated: gap > slack })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Nonlinearity;

    #[test]
    fn cubic_zero_target_is_locally_convex() {
        let p = Problem::cubic_interval(201);
        assert!(directional_second_difference(&p, 1.0, 1.0, 1e-3, &StepTarget::zero()).unwrap() > 0.0);
    }

    #[test]
    fn witness_breaks_convexity() {
        let p = Problem::cubic_interval(201);
        let w = build_nonconvexity_witness(&p, 1.0, 1.0, 1e-3, None).unwrap();
        assert!(w.k_star > 0.0 && w.d2j < 0.0 && !w.below_threshold, "{w:?}");
        let m = midpoint_convexity_test(&p, 1.0 - 1e-3, 1.0 + 1e-3, &w.target).unwrap();
        assert!(m.violated, "{m:?}");
        let again = directional_second_difference(&p, 1.0, 1.0, 1e-3, &w.target).unwrap();
        assert!((again - w.d2j).abs() <= 1e-6 * w.c1.abs());
    }

    #[test]
    fn weak_witness_reports_threshold() {
        let p = Problem::cubic_interval(201);
        let w = build_nonconvexity_witness(&p, 1.0, 1.0, 1e-3, Some(0.0)).unwrap();
        assert!(w.below_threshold && w.d2j > 0.0);
        assert!(!midpoint_convexity_test(&p, 1.0 - 1e-3, 1.0 + 1e-3, &w.target).unwrap().violated);
    }

    #[test]
    fn linear_f_has_no_witness() {
        let p = Problem::interval(1.0, 1.0, Nonlinearity::linear(1.0), 101).unwrap();
        assert!(matches!(build_nonconvexity_witness(&p, 1.0, 1.0, 1e-3, None), Err(Error::AffineMap(_))));
        let m = midpoint_convexity_test(&p, -3.0, 5.0, &StepTarget::three_level(0.2, 0.7, 9.0, -4.0)).unwrap();
        assert!(!m.violated);
    }

    #[test]
    fn degenerate_pair() {
        let p = Problem::cubic_interval(101);
        let m = midpoint_convexity_test(&p, 2.0, 2.0, &StepTarget::constant(1.0)).unwrap();
        assert_eq!(m.lhs, m.rhs);
        assert!(!m.violated);
    }
}
