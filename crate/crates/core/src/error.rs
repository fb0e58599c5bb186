use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("solver did not converge after {iterations} iterations (last scaled residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("solver diverged (non-finite iterate); try a smaller control or a finer grid")]
    Diverged,

    #[error("singular linear system at row {0}")]
    Singular(usize),

    #[error("affine control-to-state map: {0}")]
    AffineMap(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("too many failed probes: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("bisection bracket has no sign change: g(lo) = {g_lo:e}, g(hi) = {g_hi:e}")]
    NoSignChange { g_lo: f64, g_hi: f64 },

    #[error("certificate failed: {0}")]
    Certificate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
