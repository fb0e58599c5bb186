//! Sampling the cost over a grid of constant controls and locating its minima.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Evaluator;
use crate::model::{Problem, StepTarget};
use crate::pde::SolveOptions;
use crate::search::golden_section;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Left to right, each solve started from the previous state.
    WarmSequential,
    /// Every control solved independently from the cold start, in parallel.
    ColdParallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimumKind {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub index: usize,
    pub u: f64,
    pub j: f64,
    pub i: f64,
    pub kind: MinimumKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeReport {
    pub controls: Vec<f64>,
    /// `NaN` where the solve failed.
    pub j_values: Vec<f64>,
    pub i_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub failed: Vec<usize>,
    pub minima: Vec<Minimum>,
    pub policy: Policy,
}

pub const DEFAULT_REL_TOL: f64 = 0.02;

/// `Nc` equispaced controls from `lo` to `hi` inclusive.
pub fn control_grid(lo: f64, hi: f64, nc: usize) -> Result<Vec<f64>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("control range must satisfy lo < hi (got [{lo}, {hi}])")));
    }
    if nc < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 controls (got {nc})")));
    }
    let step = (hi - lo) / (nc - 1) as f64;
    Ok((0..nc).map(|i| if i == nc - 1 { hi } else { lo + i as f64 * step }).collect())
}

/// Scan `[-m, m]`.
pub fn scan_symmetric(
    problem: &Problem,
    target: &StepTarget,
    m: f64,
    nc: usize,
    policy: Policy,
    opts: &SolveOptions,
) -> Result<LandscapeReport> {
    if !(m > 0.0) {
        return Err(Error::InvalidInput(format!("half-width must be positive (got {m})")));
    }
    scan(problem, target, (-m, m), nc, policy, opts)
}

pub fn scan(
    problem: &Problem,
    target: &StepTarget,
    range: (f64, f64),
    nc: usize,
    policy: Policy,
    opts: &SolveOptions,
) -> Result<LandscapeReport> {
    let controls = control_grid(range.0, range.1, nc)?;
    let eval = Evaluator::new(problem, target, opts.clone())?;
    type Point = Option<(f64, f64, f64, usize)>;
    let points: Vec<Point> = match policy {
        Policy::WarmSequential => {
            let mut eval = eval;
            controls
                .iter()
                .map(|&u| {
                    eval.eval(u).ok().map(|e| (e.j, e.i, e.state.diagnostics.residual, e.state.diagnostics.iterations))
                })
                .collect()
        }
        Policy::ColdParallel => controls
            .par_iter()
            .map(|&u| {
                eval.eval_cold(u).ok().map(|e| (e.j, e.i, e.state.diagnostics.residual, e.state.diagnostics.iterations))
            })
            .collect(),
    };
    let failed: Vec<usize> = points.iter().enumerate().filter(|(_, p)| p.is_none()).map(|(k, _)| k).collect();
    if failed.len() * 10 > nc {
        return Err(Error::TooManyFailures { failed: failed.len(), total: nc });
    }
    let mut report = LandscapeReport {
        j_values: points.iter().map(|p| p.map_or(f64::NAN, |p| p.0)).collect(),
        i_values: points.iter().map(|p| p.map_or(f64::NAN, |p| p.1)).collect(),
        residuals: points.iter().map(|p| p.map_or(f64::NAN, |p| p.2)).collect(),
        iterations: points.iter().map(|p| p.map_or(0, |p| p.3)).collect(),
        controls,
        failed,
        minima: vec![],
        policy,
    };
    report.minima = extract_minima(&report, DEFAULT_REL_TOL)?;
    Ok(report)
}

/// Interior local minima by the strict three-point test on `I` (equivalently
/// `J`). A flat run counts once, at its leftmost index. A local minimum is
/// global when `I* - min I <= rel_tol |min I|`; the comparison is made on `I`
/// because `J` carries the large constant `(beta/2)||z||^2`.
pub fn extract_minima(report: &LandscapeReport, rel_tol: f64) -> Result<Vec<Minimum>> {
    let v = &report.i_values;
    let n = v.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty landscape report".into()));
    }
    let mut minima = Vec::new();
    let mut k = 1;
    while k + 1 < n {
        if !v[k].is_finite() || !v[k - 1].is_finite() || !(v[k - 1] > v[k]) {
            k += 1;
            continue;
        }
        let mut end = k;
        while end + 1 < n && v[end + 1] == v[k] {
            end += 1;
        }
        if end + 1 < n && v[end + 1].is_finite() && v[end + 1] > v[k] {
            minima.push(Minimum {
                index: k,
                u: report.controls[k],
                j: report.j_values[k],
                i: v[k],
                kind: MinimumKind::Local,
            });
        }
        k = end + 1;
    }
    classify(&mut minima, rel_tol);
    Ok(minima)
}

/// Mark as global every minimum within `rel_tol |min I|` of the smallest `I`.
pub fn classify(minima: &mut [Minimum], rel_tol: f64) {
    let best = minima.iter().map(|m| m.i).fold(f64::INFINITY, f64::min);
    for m in minima.iter_mut() {
        m.kind = if m.i - best <= rel_tol * best.abs() { MinimumKind::Global } else { MinimumKind::Local };
    }
}

impl LandscapeReport {
    pub fn global_minima(&self) -> Vec<&Minimum> {
        self.minima.iter().filter(|m| m.kind == MinimumKind::Global).collect()
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Result<Self> {
        self.minima = extract_minima(&self, rel_tol)?;
        Ok(self)
    }

    /// The three grid controls around minimum `m`.
    pub fn bracket(&self, m: &Minimum) -> (f64, f64, f64) {
        let k = m.index;
        (self.controls[k - 1], self.controls[k], self.controls[(k + 1).min(self.controls.len() - 1)])
    }

    /// Interval between the scan's local maxima on either side of minimum `m`
    /// (the ends of the scan if there is none).
    pub fn basin(&self, m: &Minimum) -> (f64, f64) {
        let v = &self.i_values;
        let mut lo = m.index;
        while lo > 0 && v[lo - 1].is_finite() && v[lo - 1] >= v[lo] {
            lo -= 1;
        }
        let mut hi = m.index;
        while hi + 1 < v.len() && v[hi + 1].is_finite() && v[hi + 1] >= v[hi] {
            hi += 1;
        }
        (self.controls[lo], self.controls[hi])
    }

    /// Columns `u,J,I,residual,iters`; shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,J,I,residual,iters\n");
        for k in 0..self.controls.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.controls[k], self.j_values[k], self.i_values[k], self.residuals[k], self.iterations[k]
            );
        }
        out
    }

    /// Single polyline of `J` against `u` with framed axes and extreme labels.
    pub fn to_svg(&self, title: &str) -> String {
        let pts: Vec<(f64, f64)> =
            self.controls.iter().zip(&self.j_values).filter(|(_, j)| j.is_finite()).map(|(&u, &j)| (u, j)).collect();
        render_svg(&pts, title, "u", "J")
    }
}

pub fn render_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h, pad) = (800.0, 500.0, 60.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="30" font-size="16" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<path d="M{pad} {pad} V{b} H{r}" fill="none" stroke="black"/>"#, b = h - pad, r = w - pad);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}" font-size="12">{}</text>"#, h - pad + 20.0, fmt_tick(x0));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
        w - pad,
        h - pad + 20.0,
        fmt_tick(x1)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
        pad - 5.0,
        h - pad,
        fmt_tick(y0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
        pad - 5.0,
        pad + 4.0,
        fmt_tick(y1)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 15.0,
        escape(x_label)
    );
    let _ = writeln!(s, r#"<text x="20" y="{}" font-size="14">{}</text>"#, h / 2.0, escape(y_label));
    let mut poly = String::new();
    for &(x, y) in points {
        let _ = write!(poly, "{:.2},{:.2} ", sx(x), sy(y));
    }
    let _ =
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, poly.trim_end());
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.4e}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedMinimum {
    pub u: f64,
    pub j: f64,
    pub i: f64,
    pub bracket: (f64, f64),
}

/// Golden-section refinement of a grid minimum to a bracket no wider than
/// `1e-6 (u_hi - u_lo)`. States are solved to round-off so that differences of
/// `I` near the minimum are meaningful.
pub fn refine_minimum(problem: &Problem, target: &StepTarget, bracket: (f64, f64, f64)) -> Result<RefinedMinimum> {
    let (lo, mid, hi) = bracket;
    if !(lo < mid && mid < hi) {
        return Err(Error::InvalidInput(format!("invalid bracket ({lo}, {mid}, {hi})")));
    }
    let mut eval = Evaluator::new(problem, target, SolveOptions::precise())?;
    let i_lo = eval.eval(lo)?.i;
    let i_hi = eval.eval(hi)?.i;
    let mid_eval = eval.eval(mid)?;
    if !(mid_eval.i < i_lo.min(i_hi)) {
        return Err(Error::InvalidInput(format!(
            "bracket ({lo}, {mid}, {hi}) does not enclose a minimum: I = ({i_lo:e}, {:e}, {i_hi:e})",
            mid_eval.i
        )));
    }
    let g = golden_section(|u| eval.eval(u).map(|e| e.i), lo, hi, 1e-6 * (hi - lo))?;
    let (u, i) = if g.fx <= mid_eval.i { (g.x, g.fx) } else { (mid, mid_eval.i) };
    Ok(RefinedMinimum { u, j: i + eval.constant(), i, bracket: (lo, hi) })
}
