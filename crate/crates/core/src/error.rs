use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} outside the supported range 2..=8")]
    Dimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unbounded in direction {0:?}")]
    Unbounded(Vec<f64>),
    #[error("point is outside the polytope (slack {0:e})")]
    Outside(f64),
    #[error("empty result: {0}")]
    Empty(String),
    #[error("origin is not interior: {0}")]
    OriginNotInterior(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no convergence after {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("index file: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of runtime-verified geometric guarantees, as opposed to bad input.
    pub fn is_invariant(&self) -> bool {
        matches!(self, Error::Invariant(_) | Error::NoConvergence { .. })
    }
}
