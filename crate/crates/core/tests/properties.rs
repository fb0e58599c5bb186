use proptest::prelude::*;

use semilinear_control::convexity::midpoint_convexity_test;
use semilinear_control::functional::{eval_halfline_inf, eval_i, HalfLineOptions, Side};
use semilinear_control::landscape::{scan, Policy};
use semilinear_control::optimizer::gradient_constant;
use semilinear_control::pde::{solve_state, SolveOptions};
use semilinear_control::{Control, Nonlinearity, Problem, ProblemKind, StepTarget};

fn state(p: &Problem, u: f64) -> Vec<f64> {
    solve_state(p, &Control::Constant(u), &SolveOptions::default()).unwrap().samples
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn nonlinearity() -> impl Strategy<Value = Nonlinearity> {
    (0.0..2.0f64, 0.1..2.0f64, 1.5..4.0f64).prop_map(|(a, b, p)| Nonlinearity::new(a, b, p).unwrap())
}

fn problem() -> impl Strategy<Value = Problem> {
    (nonlinearity(), 0usize..3, 1usize..=3).prop_map(|(nl, kind, n)| match kind {
        0 => Problem::interval(1.0, 1.0, nl, 201).unwrap(),
        1 => Problem::new(ProblemKind::RadialBoundary, n, 1.0, None, 1.0, nl, 201).unwrap(),
        _ => Problem::new(ProblemKind::RadialInternal, n, 1.0, Some(0.25), 1.0, nl, 201).unwrap(),
    })
}

fn target() -> impl Strategy<Value = StepTarget> {
    (0.3..0.5f64, 0.55..0.9f64, -50.0..50.0f64, -50.0..50.0f64)
        .prop_map(|(a, b, outer, inner)| StepTarget::three_level(a, b, outer, inner))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nonlinearity_is_increasing_and_odd(nl in nonlinearity(), y1 in -10.0..10.0f64, dy in 1e-3..5.0f64) {
        prop_assert!(nl.value(y1) < nl.value(y1 + dy));
        prop_assert_eq!(nl.value(-y1), -nl.value(y1));
    }

    #[test]
    fn derivative_matches_central_difference(nl in nonlinearity(), y in 0.1..10.0f64, sign in prop::bool::ANY) {
        let y = if sign { y } else { -y };
        let d = 1e-6 * y.abs();
        let fd = (nl.value(y + d) - nl.value(y - d)) / (2.0 * d);
        prop_assert!((fd - nl.derivative(y)).abs() <= 1e-6 * nl.derivative(y).abs());
    }

    #[test]
    fn comparison_principle(p in problem(), u1 in -20.0..20.0f64, du in 0.0..20.0f64) {
        let (y1, y2) = (state(&p, u1), state(&p, u1 + du));
        let tol = 1e-9 * sup(&y2).max(1.0);
        for (a, b) in y1.iter().zip(&y2) {
            prop_assert!(*a <= b + tol);
        }
    }

    #[test]
    fn sign_follows_control(p in problem(), u in 0.1..30.0f64) {
        let n = p.grid().len();
        let pos = state(&p, u);
        let neg = state(&p, -u);
        prop_assert!(pos[1..n - 1].iter().all(|&v| v > 0.0));
        prop_assert!(neg[1..n - 1].iter().all(|&v| v < 0.0));
    }

    #[test]
    fn odd_symmetry(p in problem(), u in -30.0..30.0f64) {
        let (a, b) = (state(&p, u), state(&p, -u));
        let tol = 1e-9 * sup(&a).max(1.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x + y).abs() <= tol);
        }
    }

    #[test]
    fn spatial_symmetry(nl in nonlinearity(), u in -30.0..30.0f64) {
        let p = Problem::interval(1.0, 1.0, nl, 201).unwrap();
        let y = state(&p, u);
        let n = y.len();
        let tol = 1e-9 * sup(&y).max(1.0);
        for j in 0..n {
            prop_assert!((y[j] - y[n - 1 - j]).abs() <= tol);
        }
    }

    #[test]
    fn nonconstant_states(p in problem(), u in 0.05..30.0f64, sign in prop::bool::ANY) {
        let y = state(&p, if sign { u } else { -u });
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(hi - lo > 0.0);
    }

    #[test]
    fn superposition_fails_for_nonlinear_f(nl in nonlinearity(), u in 0.5..10.0f64) {
        let p = Problem::interval(1.0, 1.0, nl, 201).unwrap();
        let (g1, g2) = (state(&p, u), state(&p, 2.0 * u));
        let defect = g1.iter().zip(&g2).fold(0.0f64, |m, (a, b)| m.max((b - 2.0 * a).abs()));
        prop_assert!(defect > 1e-6);
    }

    #[test]
    fn policies_agree(z in target(), lo in -40.0..-1.0f64, width in 5.0..80.0f64) {
        let p = Problem::cubic_interval(101);
        let opts = SolveOptions::default();
        let a = scan(&p, &z, (lo, lo + width), 25, Policy::WarmSequential, &opts).unwrap();
        let b = scan(&p, &z, (lo, lo + width), 25, Policy::ColdParallel, &opts).unwrap();
        for (x, y) in a.j_values.iter().zip(&b.j_values) {
            prop_assert!((x - y).abs() <= 10.0 * opts.tol_res * x.abs().max(1.0));
        }
        let ia: Vec<usize> = a.minima.iter().map(|m| m.index).collect();
        let ib: Vec<usize> = b.minima.iter().map(|m| m.index).collect();
        prop_assert_eq!(ia, ib);
    }

    #[test]
    fn shifted_and_full_cost_share_minima(z in target()) {
        let p = Problem::cubic_interval(101);
        let r = scan(&p, &z, (-30.0, 30.0), 41, Policy::WarmSequential, &SolveOptions::default()).unwrap();
        let by_j: Vec<usize> = (1..40).filter(|&k| r.j_values[k - 1] > r.j_values[k] && r.j_values[k] < r.j_values[k + 1]).collect();
        let by_i: Vec<usize> = r.minima.iter().map(|m| m.index).collect();
        prop_assert_eq!(by_j, by_i);
    }

    #[test]
    fn affine_map_is_never_nonconvex(a in 0.1..5.0f64, ua in -20.0..20.0f64, ub in -20.0..20.0f64, z in target()) {
        let p = Problem::interval(1.0, 1.0, Nonlinearity::linear(a), 101).unwrap();
        prop_assert!(!midpoint_convexity_test(&p, ua, ub, &z).unwrap().violated);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn adjoint_gradient_matches_finite_difference(u in -100.0..100.0f64, z in target()) {
        let p = Problem::cubic_interval(201);
        let g = gradient_constant(&p, u, &z).unwrap();
        let d = 1e-4 * u.abs().max(1.0);
        let o = SolveOptions::precise();
        let fd = (eval_i(&p, &Control::Constant(u + d), &z, &o).unwrap() - eval_i(&p, &Control::Constant(u - d), &z, &o).unwrap()) / (2.0 * d);
        prop_assert!((g - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "u = {}: {} vs {}", u, g, fd);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn halfline_infima_are_bounded_and_nonpositive(z in target(), side in prop::bool::ANY) {
        let p = Problem::cubic_interval(101);
        let side = if side { Side::Nonnegative } else { Side::Nonpositive };
        let hl = HalfLineOptions { probes: 60, ..Default::default() };
        let r = eval_halfline_inf(&p, &z, side, &hl).unwrap();
        prop_assert!(r.h <= 0.0);
        prop_assert!(r.argmin.abs() <= p.minimizer_bound(&z) + 1e-9);
        match side {
            Side::Nonnegative => prop_assert!(r.argmin >= 0.0),
            Side::Nonpositive => prop_assert!(r.argmin <= 0.0),
        }
    }
}
