use thiserror::Error;

/// Errors raised by the learning and auditing routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("point is not covered by any region")]
    Uncovered,

    #[error(transparent)]
    Convergence(Box<ConvergenceError>),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<ConvergenceError> for Error {
    fn from(e: ConvergenceError) -> Self {
        Error::Convergence(Box::new(e))
    }
}

/// The Newton solver ran out of iterations (or stalled) before the gradient
/// fell below tolerance. Carries the best iterate seen.
#[derive(Debug, Clone, Error)]
#[error("solver did not converge{} after {iterations} iterations (gradient norm {grad_norm:e})", context_suffix(*.region, *.eps))]
pub struct ConvergenceError {
    pub iterations: usize,
    pub grad_norm: f64,
    pub best_alpha: Vec<f64>,
    pub region: Option<usize>,
    pub eps: Option<f64>,
}

impl ConvergenceError {
    pub fn in_region(mut self, region: usize) -> Self {
        self.region = Some(region);
        self
    }

    pub fn at_eps(mut self, eps: f64) -> Self {
        self.eps = Some(eps);
        self
    }
}

fn context_suffix(region: Option<usize>, eps: Option<f64>) -> String {
    match (region, eps) {
        (Some(b), Some(e)) => format!(" in region {b} at eps {e}"),
        (Some(b), None) => format!(" in region {b}"),
        (None, Some(e)) => format!(" at eps {e}"),
        (None, None) => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
