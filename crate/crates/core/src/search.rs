//! Derivative-free scalar searches: golden-section minimization and bisection.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenResult {
    pub x: f64,
    pub fx: f64,
    pub lo: f64,
    pub hi: f64,
    pub evaluations: usize,
}

/// Minimize `f` on `[lo, hi]` until the bracket is no wider than `width`.
/// Returns the best point evaluated.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, width: f64) -> Result<GoldenResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidInput("golden-section width must be positive".into()));
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut evaluations = 2;
    let (mut best_x, mut best_f) = if fc <= fd { (c, fc) } else { (d, fd) };
    while b - a > width {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            if fc < best_f {
                best_x = c;
                best_f = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            if fd < best_f {
                best_x = d;
                best_f = fd;
            }
        }
        evaluations += 1;
        if evaluations > 10_000 {
            break;
        }
    }
    Ok(GoldenResult { x: best_x, fx: best_f, lo: a, hi: b, evaluations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectionResult {
    pub root: f64,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    /// Bracket widths after each halving.
    pub widths: Vec<f64>,
}

/// Find a sign change of `g` on `[lo, hi]`. Stops when `done(g(mid))` holds,
/// the bracket is narrower than `x_tol`, or after `max_iters` halvings.
pub fn bisect<G, D>(mut g: G, lo: f64, hi: f64, x_tol: f64, max_iters: usize, mut done: D) -> Result<BisectionResult>
where
    G: FnMut(f64) -> Result<f64>,
    D: FnMut(f64) -> bool,
{
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("invalid bisection bracket [{lo}, {hi}]")));
    }
    let g_lo = g(lo)?;
    if g_lo == 0.0 || done(g_lo) {
        return Ok(BisectionResult { root: lo, value: g_lo, lo, hi, iterations: 0, widths: vec![] });
    }
    let g_hi = g(hi)?;
    if g_hi == 0.0 {
        return Ok(BisectionResult { root: hi, value: g_hi, lo, hi, iterations: 0, widths: vec![] });
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::NoSignChange { g_lo, g_hi });
    }
    let (mut a, mut b, mut ga) = (lo, hi, g_lo);
    let mut widths = Vec::new();
    let mut gm = ga;
    for it in 1..=max_iters {
        let mid = 0.5 * (a + b);
        gm = g(mid)?;
        if gm == 0.0 || done(gm) {
            widths.push(0.5 * (b - a));
            return Ok(BisectionResult { root: mid, value: gm, lo: a, hi: b, iterations: it, widths });
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
        widths.push(b - a);
        if b - a <= x_tol {
            return Ok(BisectionResult { root: mid, value: gm, lo: a, hi: b, iterations: it, widths });
        }
    }
    Err(Error::NotConverged { iterations: max_iters, residual: gm.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let r = golden_section(|x| Ok((x - 0.3) * (x - 0.3) + 2.0), -1.0, 2.0, 1e-9).unwrap();
        assert!((r.x - 0.3).abs() < 1e-8);
        assert!(r.hi - r.lo <= 1e-9);
        assert!((r.fx - 2.0).abs() < 1e-15);
    }

    #[test]
    fn golden_endpoint_minimum_and_bad_bracket() {
        let r = golden_section(Ok, 0.0, 1.0, 1e-8).unwrap();
        assert!(r.x < 1e-7);
        assert!(golden_section(Ok, 1.0, 0.0, 1e-8).is_err());
    }

    #[test]
    fn bisection_halves_and_converges() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-12, 60, |_| false).unwrap();
        assert!((r.root - 2f64.sqrt()).abs() < 1e-11);
        for w in r.widths.windows(2) {
            assert_eq!(w[1], 0.5 * w[0]);
        }
        assert!(r.iterations <= 60);
        assert!(matches!(bisect(|x| Ok(x * x + 1.0), 0.0, 1.0, 1e-9, 60, |_| false), Err(Error::NoSignChange { .. })));
    }
}
