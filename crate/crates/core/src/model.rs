//! Problem definition shared by every other module: the nonlinearity, the
//! geometry with its grid and quadrature weights, step targets and the
//! sampled state/adjoint fields.
//!
//! Radial problems are discretized on `rho in [0, R]`. For `n = 1` the ball
//! `B(0, R)` is the symmetric interval `(-R, R)`, so volume integrals carry
//! the factor `n * alpha(n) = 2`. The interval-boundary problem lives on
//! `(0, R)` with the same control at both endpoints and plain trapezoid
//! weights.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `f(y) = a*y + b*|y|^(p-1)*y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub a: f64,
    pub b: f64,
    pub p: f64,
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Self::cubic()
    }
}

impl Nonlinearity {
    pub fn new(a: f64, b: f64, p: f64) -> Result<Self> {
        let nl = Self { a, b, p };
        nl.validate()?;
        Ok(nl)
    }

    pub fn cubic() -> Self {
        Self { a: 0.0, b: 1.0, p: 3.0 }
    }

    pub fn linear(a: f64) -> Self {
        Self { a, b: 0.0, p: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a + self.b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "nonlinearity needs a >= 0, b >= 0, a + b > 0 (got a = {}, b = {})",
                self.a, self.b
            )));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidInput(format!("exponent p must exceed 1 (got {})", self.p)));
        }
        Ok(())
    }

    /// True iff `f''(y) != 0` for all `y != 0`.
    pub fn curvature_mode(&self) -> bool {
        self.b > 0.0
    }

    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        self.a * y + self.b * y.abs().powf(self.p - 1.0) * y
    }

    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        self.a + self.b * self.p * y.abs().powf(self.p - 1.0)
    }

    /// `f''(y)`, with the value 0 at `y = 0`.
    #[inline]
    pub fn second_derivative(&self, y: f64) -> f64 {
        if y == 0.0 || self.b == 0.0 {
            return 0.0;
        }
        self.b * self.p * (self.p - 1.0) * y.abs().powf(self.p - 3.0) * y
    }

    /// Secant multiplier `f(y)/y = a + b*|y|^(p-1)`, continuous at 0 with value `f'(0)`.
    #[inline]
    pub fn secant(&self, y: f64) -> f64 {
        self.a + self.b * y.abs().powf(self.p - 1.0)
    }

    /// Evaluate `f`, `f'` or `f''` by order.
    pub fn eval(&self, y: f64, order: u8) -> Result<f64> {
        match order {
            0 => Ok(self.value(y)),
            1 => Ok(self.derivative(y)),
            2 => Ok(self.second_derivative(y)),
            _ => Err(Error::InvalidInput(format!("derivative order must be 0, 1 or 2 (got {order})"))),
        }
    }
}

/// Uniform grid on `[0, length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: usize,
    length: f64,
}

impl Grid {
    pub fn new(nodes: usize, length: f64) -> Result<Self> {
        if nodes < 3 {
            return Err(Error::InvalidInput(format!("grid needs at least 3 nodes (got {nodes})")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidInput(format!("grid length must be positive (got {length})")));
        }
        Ok(Self { nodes, length })
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.nodes - 1) as f64
    }

    /// Node coordinate; the last node is exactly `length`.
    pub fn x(&self, j: usize) -> f64 {
        if j + 1 == self.nodes {
            self.length
        } else {
            j as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nodes).map(|j| self.x(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    IntervalBoundary,
    RadialBoundary,
    RadialInternal,
}

impl ProblemKind {
    pub fn is_boundary(self) -> bool {
        !matches!(self, ProblemKind::RadialInternal)
    }
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => panic!("unsupported dimension {n}"),
    }
}

/// A control: one constant, or (internal control only) one value per
/// control node `0..=interface_index`.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Constant(f64),
    Field(Vec<f64>),
}

impl From<f64> for Control {
    fn from(u: f64) -> Self {
        Control::Constant(u)
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    kind: ProblemKind,
    dim: usize,
    outer_radius: f64,
    inner_radius: Option<f64>,
    beta: f64,
    nonlinearity: Nonlinearity,
    grid: Grid,
    obs_weights: Vec<f64>,
    obs_indicator: Vec<f64>,
    ctrl_weights: Vec<f64>,
    ctrl_indicator: Vec<f64>,
    volume_weights: Vec<f64>,
    interface: Option<usize>,
}

impl Problem {
    pub fn new(
        kind: ProblemKind,
        dim: usize,
        outer_radius: f64,
        inner_radius: Option<f64>,
        beta: f64,
        nonlinearity: Nonlinearity,
        nodes: usize,
    ) -> Result<Self> {
        nonlinearity.validate()?;
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!("dimension must be 1, 2 or 3 (got {dim})")));
        }
        if kind == ProblemKind::IntervalBoundary && dim != 1 {
            return Err(Error::InvalidInput("interval-boundary problems are one-dimensional".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be positive (got {beta})")));
        }
        let grid = Grid::new(nodes, outer_radius)?;
        let h = grid.dx();
        let count = grid.len();

        let interface = match (kind, inner_radius) {
            (ProblemKind::RadialInternal, Some(r)) => {
                if !(r > 0.0 && r < outer_radius) {
                    return Err(Error::InvalidInput(format!(
                        "inner radius must satisfy 0 < r < R (got r = {r}, R = {outer_radius})"
                    )));
                }
                let idx = (r / h).round();
                if (idx * h - r).abs() > 1e-9 * outer_radius || idx < 1.0 || idx as usize + 1 >= count {
                    return Err(Error::InvalidInput(format!(
                        "inner radius {r} must fall on an interior grid node (dx = {h})"
                    )));
                }
                Some(idx as usize)
            }
            (ProblemKind::RadialInternal, None) => {
                return Err(Error::InvalidInput("radial-internal problems need an inner radius r".into()))
            }
            _ => None,
        };

        let trap = |j: usize, lo: usize, hi: usize| -> f64 {
            if j < lo || j > hi {
                0.0
            } else if j == lo || j == hi {
                0.5 * h
            } else {
                h
            }
        };
        let radial_factor = |j: usize| -> f64 {
            match kind {
                ProblemKind::IntervalBoundary => 1.0,
                _ => dim as f64 * unit_ball_volume(dim) * grid.x(j).powi(dim as i32 - 1),
            }
        };
        let volume_weights: Vec<f64> = (0..count).map(|j| radial_factor(j) * trap(j, 0, count - 1)).collect();

        let (obs_weights, obs_indicator, ctrl_weights, ctrl_indicator) = match interface {
            None => (volume_weights.clone(), vec![1.0; count], vec![], vec![]),
            Some(k) => {
                let obs_w: Vec<f64> = (0..count).map(|j| radial_factor(j) * trap(j, k, count - 1)).collect();
                let ctrl_w: Vec<f64> = (0..=k).map(|j| radial_factor(j) * trap(j, 0, k)).collect();
                let obs_ind: Vec<f64> = (0..count)
                    .map(|j| match j.cmp(&k) {
                        std::cmp::Ordering::Less => 0.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Greater => 1.0,
                    })
                    .collect();
                let ctrl_ind: Vec<f64> = (0..=k).map(|j| if j == k { 0.5 } else { 1.0 }).collect();
                (obs_w, obs_ind, ctrl_w, ctrl_ind)
            }
        };

        Ok(Self {
            kind,
            dim,
            outer_radius,
            inner_radius: if interface.is_some() { inner_radius } else { None },
            beta,
            nonlinearity,
            grid,
            obs_weights,
            obs_indicator,
            ctrl_weights,
            ctrl_indicator,
            volume_weights,
            interface,
        })
    }

    /// One-dimensional boundary control on `(0, R)`, control at both ends.
    pub fn interval(outer_radius: f64, beta: f64, nonlinearity: Nonlinearity, nodes: usize) -> Result<Self> {
        Self::new(ProblemKind::IntervalBoundary, 1, outer_radius, None, beta, nonlinearity, nodes)
    }

    /// Interval with `f = y^3`, `R = 1`, `beta = 1`.
    pub fn cubic_interval(nodes: usize) -> Self {
        Self::interval(1.0, 1.0, Nonlinearity::cubic(), nodes).expect("valid built-in problem")
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.kind, self.dim, self.outer_radius, self.inner_radius, beta, self.nonlinearity, self.grid.len())
    }

    pub fn with_nodes(&self, nodes: usize) -> Result<Self> {
        Self::new(self.kind, self.dim, self.outer_radius, self.inner_radius, self.beta, self.nonlinearity, nodes)
    }

    pub fn with_nonlinearity(&self, nonlinearity: Nonlinearity) -> Result<Self> {
        Self::new(self.kind, self.dim, self.outer_radius, self.inner_radius, self.beta, nonlinearity, self.grid.len())
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }

    pub fn inner_radius(&self) -> Option<f64> {
        self.inner_radius
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Index of the node at `rho = r` for internal control.
    pub fn interface_index(&self) -> Option<usize> {
        self.interface
    }

    /// Trapezoid weights (including the radial measure) over the observation domain.
    pub fn obs_weights(&self) -> &[f64] {
        &self.obs_weights
    }

    /// Fraction of each node's cell lying in the observation domain.
    pub fn obs_indicator(&self) -> &[f64] {
        &self.obs_indicator
    }

    /// Trapezoid weights over the whole domain.
    pub fn volume_weights(&self) -> &[f64] {
        &self.volume_weights
    }

    /// Quadrature weights of the control nodes `0..=interface` (internal control only).
    pub fn ctrl_weights(&self) -> &[f64] {
        &self.ctrl_weights
    }

    /// Source factor of each control node in the state equation (1, and 1/2 at the interface).
    pub fn ctrl_indicator(&self) -> &[f64] {
        &self.ctrl_indicator
    }

    pub fn ctrl_len(&self) -> usize {
        self.ctrl_weights.len()
    }

    /// Observation domain `[start, R]`.
    pub fn obs_domain(&self) -> (f64, f64) {
        (self.inner_radius.unwrap_or(0.0), self.outer_radius)
    }

    /// Exact measure of the control set: `R^(n-1) * n * alpha(n)` for boundary
    /// control (2 on the interval), `alpha(n) * r^n` for internal control.
    pub fn control_measure(&self) -> f64 {
        let n = self.dim;
        match self.kind {
            ProblemKind::IntervalBoundary => 2.0,
            ProblemKind::RadialBoundary => self.outer_radius.powi(n as i32 - 1) * n as f64 * unit_ball_volume(n),
            ProblemKind::RadialInternal => unit_ball_volume(n) * self.inner_radius.unwrap_or(0.0).powi(n as i32),
        }
    }

    /// Control cost `1/2 * int |u|^2` of a constant control, as used by the discrete functional.
    pub fn constant_control_cost(&self, u: f64) -> f64 {
        match self.kind {
            ProblemKind::RadialInternal => 0.5 * u * u * self.ctrl_weights.iter().sum::<f64>(),
            _ => 0.5 * self.control_measure() * u * u,
        }
    }

    /// Exact squared `L^2` norm of a step target over the observation domain.
    pub fn target_norm_sq(&self, target: &StepTarget) -> f64 {
        let (lo, hi) = self.obs_domain();
        let n = self.dim as i32;
        let measure = |a: f64, b: f64| -> f64 {
            match self.kind {
                ProblemKind::IntervalBoundary => b - a,
                _ => unit_ball_volume(self.dim) * (b.powi(n) - a.powi(n)),
            }
        };
        let mut edges = Vec::with_capacity(target.breakpoints.len() + 2);
        edges.push(f64::NEG_INFINITY);
        edges.extend_from_slice(&target.breakpoints);
        edges.push(f64::INFINITY);
        target
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let a = edges[i].max(lo);
                let b = edges[i + 1].min(hi);
                if b > a {
                    v * v * measure(a, b)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Quadrature version of `||z||^2` on the observation domain.
    pub fn target_norm_sq_quadrature(&self, samples: &[f64]) -> f64 {
        self.obs_weights.iter().zip(samples).map(|(w, z)| w * z * z).sum()
    }

    /// `sqrt(beta / sigma) * ||z||`: no minimizer over constant controls exceeds this in magnitude.
    pub fn minimizer_bound(&self, target: &StepTarget) -> f64 {
        (self.beta / self.control_measure()).sqrt() * self.target_norm_sq(target).sqrt()
    }

    pub fn config(&self, target: Option<&StepTarget>) -> ProblemConfig {
        ProblemConfig {
            kind: self.kind,
            n: self.dim,
            outer_radius: self.outer_radius,
            inner_radius: self.inner_radius,
            beta: self.beta,
            nonlinearity: self.nonlinearity,
            grid: GridConfig { nodes: self.grid.len() },
            target: target.cloned(),
        }
    }
}

/// Piecewise-constant target: `values[i]` on `[breakpoints[i-1], breakpoints[i])`,
/// with the first and last pieces extending to the ends of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTarget {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepTarget {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let target = Self { breakpoints, values };
        target.validate()?;
        Ok(target)
    }

    pub fn constant(value: f64) -> Self {
        Self { breakpoints: vec![], values: vec![value] }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `outer` on `(0, lo) U (hi, R)` and `inner` on `(lo, hi)`.
    pub fn three_level(lo: f64, hi: f64, outer: f64, inner: f64) -> Self {
        Self { breakpoints: vec![lo, hi], values: vec![outer, inner, outer] }
    }

    /// Target of the `fig5-8` scan: 410000 near the endpoints, -10300000 on (1/4, 3/4).
    pub fn fig8() -> Self {
        Self::three_level(0.25, 0.75, 410_000.0, -10_300_000.0)
    }

    /// Target of the `fig4` scan: 260000 near the endpoints, -10300000 on (1/4, 3/4).
    pub fn fig4() -> Self {
        Self::three_level(0.25, 0.75, 260_000.0, -10_300_000.0)
    }

    /// Step target reproducing nodal values exactly: breakpoints sit at the
    /// midpoints between consecutive nodes whose values differ.
    pub fn from_nodal(grid: &Grid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        let mut breakpoints = Vec::new();
        let mut steps = vec![values[0]];
        for j in 1..values.len() {
            if values[j] != values[j - 1] {
                breakpoints.push(0.5 * (grid.x(j - 1) + grid.x(j)));
                steps.push(values[j]);
            }
        }
        Self::new(breakpoints, steps)
    }

    /// As [`StepTarget::from_nodal`], keeping only the nodes of the observation
    /// domain so that every breakpoint lies inside it.
    pub fn from_observed(problem: &Problem, values: &[f64]) -> Result<Self> {
        let grid = problem.grid();
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        let start = problem.interface_index().unwrap_or(0);
        let mut padded = values.to_vec();
        for v in padded.iter_mut().take(start) {
            *v = values[start];
        }
        Self::from_nodal(grid, &padded)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.breakpoints.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "step target needs one more value than breakpoints ({} values, {} breakpoints)",
                self.values.len(),
                self.breakpoints.len()
            )));
        }
        if self.breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("breakpoints must be strictly increasing".into()));
        }
        if self.values.iter().chain(&self.breakpoints).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("step target contains non-finite numbers".into()));
        }
        Ok(())
    }

    /// Value at `x`; a point on a breakpoint takes the value to its right.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= x);
        self.values[idx]
    }

    /// Nodewise samples on the grid. Breakpoints must lie in the closed domain `[lo, hi]`.
    pub fn sample_in(&self, grid: &Grid, domain: (f64, f64)) -> Result<Vec<f64>> {
        self.validate()?;
        let (lo, hi) = domain;
        if let Some(b) = self.breakpoints.iter().find(|&&b| b < lo || b > hi) {
            return Err(Error::InvalidInput(format!(
                "breakpoint {b} lies outside the observation domain [{lo}, {hi}]"
            )));
        }
        Ok((0..grid.len()).map(|j| self.eval(grid.x(j))).collect())
    }

    pub fn sample(&self, problem: &Problem) -> Result<Vec<f64>> {
        self.sample_in(problem.grid(), problem.obs_domain())
    }

    pub fn shifted(&self, mu: f64) -> Self {
        Self { breakpoints: self.breakpoints.clone(), values: self.values.iter().map(|v| v + mu).collect() }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { breakpoints: self.breakpoints.clone(), values: self.values.iter().map(|v| v * k).collect() }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    FixedPoint,
    Newton,
    Linear,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub solver: SolverKind,
}

/// Grid samples of a state `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub samples: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Grid samples of an adjoint state `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointField {
    pub samples: Vec<f64>,
    pub dx: f64,
    pub diagnostics: Diagnostics,
}

/// Columns `x,value`, one row per node.
pub fn field_csv(grid: &Grid, samples: &[f64]) -> String {
    let mut out = String::from("x,value\n");
    for (j, v) in samples.iter().enumerate() {
        out.push_str(&format!("{},{}\n", grid.x(j), v));
    }
    out
}

impl StateField {
    pub fn to_csv(&self, grid: &Grid) -> String {
        field_csv(grid, &self.samples)
    }
}

impl AdjointField {
    pub fn to_csv(&self, grid: &Grid) -> String {
        field_csv(grid, &self.samples)
    }
}

/// JSON form of a problem and (optionally) its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub n: usize,
    #[serde(rename = "R")]
    pub outer_radius: f64,
    #[serde(rename = "r", default, skip_serializing_if = "Option::is_none")]
    pub inner_radius: Option<f64>,
    pub beta: f64,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<StepTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(rename = "Nx")]
    pub nodes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nodes: 1001 }
    }
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Problem> {
        Problem::new(
            self.kind,
            self.n,
            self.outer_radius,
            self.inner_radius,
            self.beta,
            self.nonlinearity,
            self.grid.nodes,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("problem JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem config serializes")
    }
}
