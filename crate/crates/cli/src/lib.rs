#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Experiments behind the `semictl` binary. Each command writes its files into
//! an output directory and returns whether the property it checks holds.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use semilinear_control::convexity::{
    build_nonconvexity_witness, default_step, midpoint_convexity_test, MidpointVerdict, Witness,
};
use semilinear_control::landscape::{
    classify, refine_minimum, scan, LandscapeReport, Minimum, MinimumKind, Policy, DEFAULT_REL_TOL,
};
use semilinear_control::optimizer::{descend, kkt_residual, DescentOptions, KktRecord, StopReason};
use semilinear_control::target_builder::{
    calibrate_target, construct_seed_target, CalibrationOptions, CalibrationReport, GammaCertificate,
    DEFAULT_CROSSING_TOL, DEFAULT_DET_TOL,
};
use semilinear_control::{Control, Problem, ProblemConfig, SolveOptions, StepTarget};

pub const SCHEMA_VERSION: &str = "semictl/1";
pub const DEFAULT_CONTROLS: usize = 2000;
pub const DEFAULT_RANGE: (f64, f64) = (-200.0, 6000.0);
/// Relative tolerance on `I` when classifying the minima of a calibrated target.
pub const PIPELINE_REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Certified,
    Refuted,
}

impl Outcome {
    fn from_mismatches(m: &[String]) -> Self {
        if m.is_empty() {
            Self::Certified
        } else {
            Self::Refuted
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            Self::Certified => 0,
            Self::Refuted => 2,
        }
    }
}

/// Command-line overrides applied on top of a configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub nodes: Option<usize>,
    pub controls: Option<usize>,
    pub beta: Option<f64>,
    pub range: Option<(f64, f64)>,
    pub policy: Option<Policy>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ProblemConfig) {
        if let Some(n) = self.nodes {
            cfg.grid.nodes = n;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
    }

    fn controls(&self) -> usize {
        self.controls.unwrap_or(DEFAULT_CONTROLS)
    }

    fn policy(&self) -> Policy {
        self.policy.unwrap_or(Policy::WarmSequential)
    }
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Versioned { schema_version: SCHEMA_VERSION, body: value })?;
    let path = dir.join(name);
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_config(path: &Path) -> Result<ProblemConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ProblemConfig::from_json(&text)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetFile {
    pub target: StepTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinedPoint {
    pub u: f64,
    pub j: f64,
    pub i: f64,
    pub kind: MinimumKind,
    /// Grid control the refinement started from.
    pub grid_u: f64,
    pub bracket: (f64, f64),
}

/// Refine every grid minimum and classify the refined values.
pub fn refine_all(
    problem: &Problem,
    target: &StepTarget,
    report: &LandscapeReport,
    rel_tol: f64,
) -> Result<Vec<RefinedPoint>> {
    let refined: Vec<_> = report
        .minima
        .iter()
        .map(|m| refine_minimum(problem, target, report.bracket(m)).map(|r| (m.u, r)))
        .collect::<semilinear_control::Result<_>>()?;
    let mut mins: Vec<Minimum> = refined
        .iter()
        .enumerate()
        .map(|(index, (_, r))| Minimum { index, u: r.u, j: r.j, i: r.i, kind: MinimumKind::Local })
        .collect();
    classify(&mut mins, rel_tol);
    Ok(refined
        .iter()
        .zip(&mins)
        .map(|((grid_u, r), m)| RefinedPoint {
            u: r.u,
            j: r.j,
            i: r.i,
            kind: m.kind,
            grid_u: *grid_u,
            bracket: r.bracket,
        })
        .collect())
}

fn globals(points: &[RefinedPoint]) -> Vec<&RefinedPoint> {
    points.iter().filter(|p| p.kind == MinimumKind::Global).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig4,
    Fig5To8,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fig4 => "fig4",
            Self::Fig5To8 => "fig5-8",
        }
    }

    pub fn target(self) -> StepTarget {
        match self {
            Self::Fig4 => StepTarget::fig4(),
            Self::Fig5To8 => StepTarget::fig8(),
        }
    }

    pub fn config(self) -> ProblemConfig {
        Problem::cubic_interval(1001).config(Some(&self.target()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureVerdict {
    pub figure: String,
    pub problem: ProblemConfig,
    pub range: (f64, f64),
    pub controls: usize,
    pub policy: Policy,
    pub failed_probes: usize,
    pub rel_tol: f64,
    pub minima: Vec<RefinedPoint>,
    pub local_minima: usize,
    pub global_minima: usize,
    pub u1: Option<f64>,
    pub u2: Option<f64>,
    /// `sqrt(beta / |omega|) ||z||`; every minimizer lies inside.
    pub minimizer_bound: f64,
    pub expected: String,
    pub mismatches: Vec<String>,
    pub certified: bool,
}

/// Scan one of the built-in targets and compare the minima with the expected
/// picture. Writes `landscape.csv`, `landscape.svg` and `verdict.json`.
pub fn reproduce(figure: Figure, overrides: &Overrides, out: &Path) -> Result<(Outcome, FigureVerdict)> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut cfg = figure.config();
    overrides.apply(&mut cfg);
    let problem = cfg.build()?;
    let target = figure.target();
    let range = overrides.range.unwrap_or(DEFAULT_RANGE);
    let report = scan(&problem, &target, range, overrides.controls(), overrides.policy(), &SolveOptions::default())
        .context("scan")?;
    let minima = refine_all(&problem, &target, &report, DEFAULT_REL_TOL).context("refinement")?;
    let g = globals(&minima);
    let bound = problem.minimizer_bound(&target);

    let mut mismatches = Vec::new();
    for m in &minima {
        if m.u.abs() > bound {
            mismatches.push(format!("minimizer {} outside the bound {bound}", m.u));
        }
    }
    let (u1, u2) = match g.as_slice() {
        [a, .., b] => (Some(a.u), Some(b.u)),
        [a] if a.u < 0.0 => (Some(a.u), None),
        [a] => (None, Some(a.u)),
        [] => (None, None),
    };
    let expected = match figure {
        Figure::Fig4 => {
            if minima.len() != 2 {
                mismatches.push(format!("local_minima: expected 2, found {}", minima.len()));
            } else if minima[0].u.signum() == minima[1].u.signum() {
                mismatches.push(format!("minima {} and {} have the same sign", minima[0].u, minima[1].u));
            }
            if g.len() != 1 {
                mismatches.push(format!("global_minima: expected 1, found {}", g.len()));
            }
            "local_minima = 2 of opposite sign, global_minima = 1".to_string()
        }
        Figure::Fig5To8 => {
            if g.len() != 2 {
                mismatches.push(format!("global_minima: expected 2, found {}", g.len()));
            }
            match u1 {
                Some(u) if (-60.0..=-40.0).contains(&u) => {}
                other => mismatches.push(format!("u1: expected in [-60, -40], found {other:?}")),
            }
            match u2 {
                Some(u) if (4100.0..=4500.0).contains(&u) => {}
                other => mismatches.push(format!("u2: expected in [4100, 4500], found {other:?}")),
            }
            "global_minima = 2, u1 in [-60, -40], u2 in [4100, 4500]".to_string()
        }
    };

    write_text(out, "landscape.csv", &report.to_csv())?;
    write_text(out, "landscape.svg", &report.to_svg(&format!("J over constant controls, {} target", figure.name())))?;
    let verdict = FigureVerdict {
        figure: figure.name().to_string(),
        problem: cfg,
        range,
        controls: report.controls.len(),
        policy: report.policy,
        failed_probes: report.failed.len(),
        rel_tol: DEFAULT_REL_TOL,
        local_minima: minima.len(),
        global_minima: g.len(),
        minima,
        u1,
        u2,
        minimizer_bound: bound,
        expected,
        certified: mismatches.is_empty(),
        mismatches,
    };
    write_json(out, "verdict.json", &verdict)?;
    Ok((Outcome::from_mismatches(&verdict.mismatches), verdict))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub u_minus: f64,
    pub u_plus: (f64, f64),
    pub rel_tol: f64,
    /// Largest accepted `|h1 - h2| / |h1|` after calibration.
    pub balance_tol: f64,
    pub calibration: CalibrationOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            u_minus: -1.0,
            u_plus: (1.0, 2.0),
            rel_tol: PIPELINE_REL_TOL,
            balance_tol: 1e-3,
            calibration: CalibrationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedFile {
    pub target: StepTarget,
    pub certificate: GammaCertificate,
}

#[derive(Debug, Clone, Serialize)]
pub struct DescentRun {
    pub start: f64,
    pub u: f64,
    pub i: f64,
    pub iterations: usize,
    pub reason: StopReason,
    /// Refined minimizer whose scan basin contains the start.
    pub basin_minimizer: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KktEntry {
    pub u: f64,
    pub kkt: KktRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineVerdict {
    pub problem: ProblemConfig,
    pub det: f64,
    pub det_threshold: f64,
    pub i_minus: f64,
    pub i_plus: f64,
    pub mu1: f64,
    pub h1: f64,
    pub h2: f64,
    pub balance: f64,
    pub calibration_iterations: usize,
    pub range: (f64, f64),
    pub controls: usize,
    pub rel_tol: f64,
    pub minima: Vec<RefinedPoint>,
    pub global_minima: usize,
    /// `|I(u1) - I(u2)| / max |I|` over the two global minima.
    pub global_gap: Option<f64>,
    pub descents: Vec<DescentRun>,
    pub mismatches: Vec<String>,
    pub certified: bool,
}

fn scan_range(rep: &CalibrationReport) -> (f64, f64) {
    (2.0 * rep.argmin1.min(-0.5), 2.0 * rep.argmin2.max(0.5))
}

/// Seed construction, calibration, scan, descents and optimality residuals
/// for a target with two global minimizers of opposite sign.
pub fn pipeline(
    cfg: &ProblemConfig,
    overrides: &Overrides,
    opts: &PipelineOptions,
    out: &Path,
) -> Result<(Outcome, PipelineVerdict)> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut cfg = cfg.clone();
    cfg.target = None;
    overrides.apply(&mut cfg);
    let problem = cfg.build().context("problem")?;

    let (z0, cert) = construct_seed_target(&problem, opts.u_minus, opts.u_plus, DEFAULT_CROSSING_TOL, DEFAULT_DET_TOL)
        .context("stage construct")?;
    write_json(out, "seed.json", &SeedFile { target: z0.clone(), certificate: cert.clone() })?;

    let cal = calibrate_target(&problem, &z0, &opts.calibration).context("stage calibrate")?;
    write_json(out, "calibration.json", &cal)?;
    write_json(out, "target.json", &TargetFile { target: cal.target.clone() })?;
    let target = &cal.target;

    let range = overrides.range.unwrap_or_else(|| scan_range(&cal));
    let report = scan(&problem, target, range, overrides.controls(), overrides.policy(), &SolveOptions::default())
        .context("stage scan")?;
    write_text(out, "landscape.csv", &report.to_csv())?;
    write_text(out, "landscape.svg", &report.to_svg("J over constant controls, calibrated target"))?;
    let minima = refine_all(&problem, target, &report, opts.rel_tol).context("stage refine")?;

    let starts: Vec<(f64, f64)> = report
        .minima
        .iter()
        .zip(&minima)
        .flat_map(|(m, r)| {
            let (lo, hi) = report.basin(m);
            [(0.5 * (lo + m.u), r.u), (0.5 * (m.u + hi), r.u)]
        })
        .collect();
    let descents: Vec<DescentRun> = starts
        .par_iter()
        .map(|&(start, basin_minimizer)| {
            let t = descend(&problem, start, target, &DescentOptions::default())?;
            let last = t.last();
            Ok(DescentRun {
                start,
                u: last.u,
                i: last.i,
                iterations: t.iterates.len() - 1,
                reason: t.reason,
                basin_minimizer,
                consistent: (last.u - basin_minimizer).abs() <= 1e-3 * basin_minimizer.abs().max(1.0),
            })
        })
        .collect::<semilinear_control::Result<_>>()
        .context("stage descend")?;
    write_json(out, "descents.json", &serde_json::json!({ "runs": descents }))?;

    let g = globals(&minima);
    let kkt: Vec<KktEntry> = g
        .iter()
        .map(|m| kkt_residual(&problem, &Control::Constant(m.u), target).map(|kkt| KktEntry { u: m.u, kkt }))
        .collect::<semilinear_control::Result<_>>()
        .context("stage kkt")?;
    write_json(out, "kkt.json", &serde_json::json!({ "minimizers": kkt }))?;

    let mut mismatches = Vec::new();
    if !(cert.i_minus < 0.0 && cert.i_plus < 0.0) {
        mismatches.push(format!("seed certificate: I(u-) = {}, I(u+) = {}", cert.i_minus, cert.i_plus));
    }
    let balance = (cal.h1 - cal.h2).abs() / cal.h1.abs();
    if !(balance <= opts.balance_tol) {
        mismatches.push(format!("calibration: |h1 - h2| / |h1| = {balance:e} exceeds {:e}", opts.balance_tol));
    }
    let global_gap = match g.as_slice() {
        [a, b] => Some((a.i - b.i).abs() / a.i.abs().max(b.i.abs())),
        _ => None,
    };
    match g.as_slice() {
        [a, b] if a.u < 0.0 && b.u > 0.0 => {}
        [a, b] => mismatches.push(format!("global minima {} and {} do not have opposite signs", a.u, b.u)),
        other => mismatches.push(format!("global_minima: expected 2, found {}", other.len())),
    }

    let verdict = PipelineVerdict {
        problem: cfg,
        det: cert.det,
        det_threshold: cert.det_threshold,
        i_minus: cert.i_minus,
        i_plus: cert.i_plus,
        mu1: cal.mu1,
        h1: cal.h1,
        h2: cal.h2,
        balance,
        calibration_iterations: cal.iterations,
        range,
        controls: report.controls.len(),
        rel_tol: opts.rel_tol,
        global_minima: g.len(),
        minima,
        global_gap,
        descents,
        certified: mismatches.is_empty(),
        mismatches,
    };
    write_json(out, "verdict.json", &verdict)?;
    Ok((Outcome::from_mismatches(&verdict.mismatches), verdict))
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessVerdict {
    pub problem: ProblemConfig,
    pub witness: Witness,
    /// Controls compared by the midpoint test.
    pub pair: (f64, f64),
    pub midpoint: MidpointVerdict,
    pub violated: bool,
}

/// Target breaking convexity along `v` at `u`, with `k = None` choosing twice
/// the threshold amplitude. Writes `witness-target.json` and `witness.json`.
pub fn witness(
    cfg: &ProblemConfig,
    overrides: &Overrides,
    u: f64,
    v: f64,
    k: Option<f64>,
    h: Option<f64>,
    out: &Path,
) -> Result<(Outcome, WitnessVerdict)> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut cfg = cfg.clone();
    cfg.target = None;
    overrides.apply(&mut cfg);
    let problem = cfg.build()?;
    let h = h.unwrap_or_else(|| default_step(u));
    let w = build_nonconvexity_witness(&problem, u, v, h, k)?;
    let pair = (u - h * v, u + h * v);
    let midpoint = midpoint_convexity_test(&problem, pair.0, pair.1, &w.target)?;
    write_json(out, "witness-target.json", &TargetFile { target: w.target.clone() })?;
    let verdict =
        WitnessVerdict { problem: cfg, violated: midpoint.violated && w.d2j < 0.0, witness: w, pair, midpoint };
    write_json(out, "witness.json", &verdict)?;
    let outcome = if verdict.violated { Outcome::Certified } else { Outcome::Refuted };
    Ok((outcome, verdict))
}
