use semilinear_control::convexity::{
    build_nonconvexity_witness, directional_second_difference, midpoint_convexity_test,
};
use semilinear_control::functional::{eval_i, HalfLineOptions};
use semilinear_control::landscape::{refine_minimum, scan, Policy};
use semilinear_control::optimizer::{descend, kkt_residual, DescentOptions, StopReason};
use semilinear_control::pde::{solve_state, SolveOptions};
use semilinear_control::search::bisect;
use semilinear_control::target_builder::{
    calibrate_target, construct_seed_target, partition_omegas, CalibrationOptions, DEFAULT_CROSSING_TOL,
    DEFAULT_DET_TOL,
};
use semilinear_control::{Control, Error, Nonlinearity, Problem, ProblemKind, StepTarget};

fn state(p: &Problem, u: f64) -> Vec<f64> {
    solve_state(p, &Control::Constant(u), &SolveOptions::precise()).unwrap().samples
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn primitive(nl: &Nonlinearity, y: f64) -> f64 {
    let (a, b, p) = (nl.a, nl.b, nl.p);
    0.5 * a * y * y + b * y.abs().powf(p + 1.0) / (p + 1.0)
}

// Minimise sum (y_{j+1}-y_j)^2/(2h) + h sum F(y_j) node by node.
fn energy_minimiser(nl: &Nonlinearity, nodes: usize, u: f64) -> Vec<f64> {
    let h = 1.0 / (nodes - 1) as f64;
    let mut y = vec![u; nodes];
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for j in 1..nodes - 1 {
            let s = y[j - 1] + y[j + 1];
            let mut v = y[j];
            for _ in 0..50 {
                let g = (2.0 * v - s) / h + h * nl.value(v);
                let dg = 2.0 / h + h * nl.derivative(v);
                let dv = g / dg;
                v -= dv;
                if dv.abs() <= 1e-16 * v.abs().max(1.0) {
                    break;
                }
            }
            change = change.max((v - y[j]).abs());
            y[j] = v;
        }
        if change <= 1e-15 * u.abs().max(1.0) {
            break;
        }
    }
    y
}

fn energy(nl: &Nonlinearity, y: &[f64]) -> f64 {
    let h = 1.0 / (y.len() - 1) as f64;
    let grad: f64 = y.windows(2).map(|w| (w[1] - w[0]).powi(2) / (2.0 * h)).sum();
    grad + h * y[1..y.len() - 1].iter().map(|&v| primitive(nl, v)).sum::<f64>()
}

#[test]
fn state_minimises_discrete_energy() {
    for nl in [Nonlinearity::cubic(), Nonlinearity::new(0.5, 2.0, 2.5).unwrap()] {
        let p = Problem::interval(1.0, 1.0, nl, 21).unwrap();
        for u in [-3.0, 1.0, 7.5] {
            let y = state(&p, u);
            let oracle = energy_minimiser(&nl, 21, u);
            let err = y.iter().zip(&oracle).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-10 * u.abs(), "u = {u}: {err:e}");
            let e0 = energy(&nl, &y);
            for j in 1..20 {
                let mut bumped = y.clone();
                bumped[j] += 1e-3 * u.abs();
                assert!(energy(&nl, &bumped) > e0);
            }
        }
    }
}

#[test]
fn midpoint_converges_at_second_order() {
    let reference = state(&Problem::cubic_interval(6401), 1.0)[3200];
    let errs: Vec<f64> = [51usize, 101, 201]
        .iter()
        .map(|&n| (state(&Problem::cubic_interval(n), 1.0)[(n - 1) / 2] - reference).abs())
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}, errors {errs:?}");
    }
}

#[test]
fn cubic_midpoint_value() {
    let y = state(&Problem::cubic_interval(2001), 1.0);
    assert!((y[1000] - 0.9029738549636298).abs() < 1e-6);
}

#[test]
fn refined_minimum_matches_linear_closed_form() {
    let a = 1.0;
    let c = 5.0;
    let p = Problem::interval(1.0, 1.0, Nonlinearity::linear(a), 1001).unwrap();
    let phi = state(&p, 1.0);
    let z: Vec<f64> = phi.iter().map(|v| c * v).collect();
    let target = StepTarget::from_nodal(p.grid(), &z).unwrap();
    let sigma = 2.0 * p.constant_control_cost(1.0);
    let norm = p.target_norm_sq_quadrature(&phi);
    let discrete = p.beta() * c * norm / (sigma + p.beta() * norm);
    let s = a.sqrt();
    let exact_norm = (0.5 + s.sinh() / (2.0 * s)) / (0.5 * s).cosh().powi(2);
    let exact = p.beta() * c * exact_norm / (sigma + p.beta() * exact_norm);

    let r = scan(&p, &target, (-10.0, 10.0), 201, Policy::WarmSequential, &SolveOptions::default()).unwrap();
    assert_eq!(r.minima.len(), 1);
    let m = refine_minimum(&p, &target, r.bracket(&r.minima[0])).unwrap();
    assert!((m.u - discrete).abs() <= 1e-6 * discrete, "{} vs {}", m.u, discrete);
    assert!((m.u - exact).abs() <= 1e-4 * exact, "{} vs {}", m.u, exact);
}

#[test]
fn partition_agrees_with_fine_grid() {
    let coarse = Problem::cubic_interval(1001);
    let fine = Problem::cubic_interval(8001);
    let pc = partition_omegas(&coarse, 1.0, 2.0, DEFAULT_CROSSING_TOL).unwrap();
    let pf = partition_omegas(&fine, 1.0, 2.0, DEFAULT_CROSSING_TOL).unwrap();
    assert!(pc.lambda_bar > 1.0);
    assert!((pc.lambda_bar - pf.lambda_bar).abs() <= 1e-4 * pf.lambda_bar);
    let scale = sup(&pf.state2);
    let mut checked = 0;
    for (set, sign) in [(&pc.omega1, -1.0), (&pc.omega2, 1.0)] {
        for &j in set.iter() {
            let k = 8 * j;
            let d = pf.state2[k] - pf.lambda_bar * pf.state1[k];
            if d.abs() > 1e-4 * scale {
                assert_eq!(d.signum(), sign, "node {j}");
                checked += 1;
            }
        }
    }
    assert!(checked > 900);
    // omega1 sits inside, omega2 at the ends
    assert!(pc.omega2.contains(&1) && pc.omega2.contains(&999) && pc.omega1.contains(&500));
}

#[test]
fn linear_f_has_no_partition() {
    let p = Problem::interval(1.0, 1.0, Nonlinearity::linear(1.0), 201).unwrap();
    assert!(matches!(partition_omegas(&p, 1.0, 2.0, DEFAULT_CROSSING_TOL), Err(Error::AffineMap(_))));
}

#[test]
fn seed_target_and_calibration_certificates() {
    let p = Problem::cubic_interval(201);
    let (z0, cert) = construct_seed_target(&p, -1.0, (1.0, 2.0), DEFAULT_CROSSING_TOL, DEFAULT_DET_TOL).unwrap();
    assert!(cert.det.abs() >= cert.det_threshold);
    assert_eq!(cert.attempts[0].1, 0.0);
    assert_eq!(cert.chosen_i, 2);
    let o = SolveOptions::precise();
    for u in [-1.0, 2.0] {
        let i = eval_i(&p, &Control::Constant(u), &z0, &o).unwrap();
        assert!((i + 1.0).abs() <= 1e-8, "I({u}) = {i}");
    }

    let opts =
        CalibrationOptions { halfline: HalfLineOptions { probes: 200, ..Default::default() }, ..Default::default() };
    let rep = calibrate_target(&p, &z0, &opts).unwrap();
    assert!(rep.h1 < 0.0 && rep.h2 < 0.0);
    assert!((rep.h1 - rep.h2).abs() <= opts.tol * rep.h1.abs().max(rep.h2.abs()));
    assert!(rep.endpoint_values.0 * rep.endpoint_values.1 < 0.0);
    assert!(rep.argmin1 < 0.0 && rep.argmin2 > 0.0);

    let steps = &rep.transcript[2..];
    for (k, w) in steps.windows(2).enumerate() {
        let expected = rep.mu0 / 2f64.powi(k as i32 + 2);
        assert!(((w[1].mu - w[0].mu).abs() - expected).abs() <= 1e-12 * rep.mu0);
    }

    let mut by_shift: Vec<_> = rep.transcript.iter().map(|s| (s.mu * rep.mu1.signum(), s.h1, s.h2)).collect();
    by_shift.sort_by(|a, b| a.0.total_cmp(&b.0));
    let g: Vec<f64> = by_shift.iter().map(|s| (s.2 - s.1) * rep.mu1.signum()).collect();
    for w in g.windows(2) {
        assert!(w[1] <= w[0] + 1e-6 * w[0].abs().max(1.0), "{g:?}");
    }
}

#[test]
fn bisection_halves_its_bracket() {
    let r = bisect(|x| Ok(x * x * x - 2.0), 0.0, 4.0, 1e-12, 200, |_| false).unwrap();
    assert!((r.root - 2f64.cbrt()).abs() <= 1e-11);
    for w in r.widths.windows(2) {
        assert!((w[1] - 0.5 * w[0]).abs() <= 1e-15 * w[0]);
    }
    assert!(matches!(bisect(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-9, 100, |_| false), Err(Error::NoSignChange { .. })));
}

#[test]
fn witness_second_difference_is_affine_in_k() {
    let p = Problem::cubic_interval(401);
    let base = build_nonconvexity_witness(&p, 2.0, 1.0, 1e-3, Some(1.0)).unwrap();
    for k in [0.0, 0.5, 3.0, 10.0, 2.0 * base.k_star] {
        let w = build_nonconvexity_witness(&p, 2.0, 1.0, 1e-3, Some(k)).unwrap();
        let predicted = w.c1 - k * w.c2;
        assert!((w.d2j - predicted).abs() <= 1e-6 * w.c1.abs().max(k * w.c2), "k = {k}: {} vs {predicted}", w.d2j);
        assert_eq!(w.below_threshold, k < w.k_star);
    }
}

#[test]
fn witness_survives_step_changes() {
    let p = Problem::cubic_interval(401);
    let w = build_nonconvexity_witness(&p, 2.0, 1.0, 1e-3, None).unwrap();
    for h in [5e-4, 2e-3, 5e-3] {
        assert!(directional_second_difference(&p, 2.0, 1.0, h, &w.target).unwrap() < 0.0, "h = {h}");
    }
    assert!(midpoint_convexity_test(&p, 2.0 - 1e-3, 2.0 + 1e-3, &w.target).unwrap().violated);
}

#[test]
fn affine_midpoint_tests() {
    let p = Problem::interval(1.0, 1.0, Nonlinearity::linear(2.0), 101).unwrap();
    let z = StepTarget::three_level(0.25, 0.75, 40.0, -25.0);
    let mut seed = 7u64;
    let mut next = || {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((seed >> 11) as f64 / (1u64 << 53) as f64) * 200.0 - 100.0
    };
    for _ in 0..100 {
        let (a, b) = (next(), next());
        assert!(!midpoint_convexity_test(&p, a, b, &z).unwrap().violated);
    }
}

#[test]
fn cost_is_continuous_in_u() {
    let p = Problem::cubic_interval(201);
    let z = StepTarget::fig8();
    let o = SolveOptions::precise();
    let i0 = eval_i(&p, &Control::Constant(300.0), &z, &o).unwrap();
    let mut prev = f64::INFINITY;
    for d in [1e-1, 1e-2, 1e-3, 1e-4] {
        let diff = (eval_i(&p, &Control::Constant(300.0 + d), &z, &o).unwrap() - i0).abs();
        assert!(diff < prev);
        prev = diff;
    }
}

#[test]
fn kkt_residual_drops_at_minimiser() {
    let p = Problem::cubic_interval(401);
    let z = StepTarget::fig4();
    let r = scan(&p, &z, (-200.0, 800.0), 501, Policy::WarmSequential, &SolveOptions::default()).unwrap();
    for m in &r.minima {
        let refined = refine_minimum(&p, &z, r.bracket(m)).unwrap();
        let at = kkt_residual(&p, &Control::Constant(refined.u), &z).unwrap();
        let off = kkt_residual(&p, &Control::Constant(refined.u * 1.01), &z).unwrap();
        assert!(at.relative_stationarity <= 1e-5, "{at:?}");
        assert!(off.relative_stationarity >= 10.0 * at.relative_stationarity);
        assert!(at.state_residual <= 1e-6 * refined.u.abs().max(1.0));
    }
}

#[test]
fn descent_stays_in_its_basin() {
    let p = Problem::cubic_interval(401);
    let z = StepTarget::fig4();
    let r = scan(&p, &z, (-200.0, 800.0), 501, Policy::WarmSequential, &SolveOptions::default()).unwrap();
    assert_eq!(r.minima.len(), 2);
    for m in &r.minima {
        let refined = refine_minimum(&p, &z, r.bracket(m)).unwrap();
        let (lo, hi) = r.basin(m);
        for start in [lo + 0.25 * (m.u - lo), m.u + 0.75 * (hi - m.u)] {
            let t = descend(&p, start, &z, &DescentOptions::default()).unwrap();
            assert_eq!(t.reason, StopReason::Converged, "from {start}");
            assert!(
                (t.last().u - refined.u).abs() <= 1e-3 * refined.u.abs().max(1.0),
                "{start} -> {} vs {}",
                t.last().u,
                refined.u
            );
        }
    }
}

#[test]
fn radial_problems_respect_the_boundary_value() {
    for kind in [ProblemKind::RadialBoundary, ProblemKind::RadialInternal] {
        let inner = (kind == ProblemKind::RadialInternal).then_some(0.25);
        for n in 1..=3 {
            let p = Problem::new(kind, n, 1.0, inner, 1.0, Nonlinearity::cubic(), 201).unwrap();
            let y = state(&p, 4.0);
            if kind == ProblemKind::RadialBoundary {
                assert_eq!(y[200], 4.0);
                assert!(y[0] < 4.0 && y[0] > 0.0);
            } else {
                assert_eq!(y[200], 0.0);
                assert!(y[0] > 0.0);
            }
        }
    }
}
