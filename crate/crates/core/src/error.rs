use thiserror::Error;

/// Errors raised by the discretization and the solvers.
///
/// Numeric payloads are reported as `f64` regardless of the scalar type in use.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QviError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular or ill-conditioned system (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("{solver} did not converge in {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("fixed-point iteration did not converge in {iterations} steps (last difference {last_difference:e}, contraction estimate {rate:.4})")]
    FixedPoint {
        iterations: usize,
        last_difference: f64,
        rate: f64,
    },

    #[error("active-set iteration cycled after {iterations} steps ({active} active nodes)")]
    Cycling { iterations: usize, active: usize },

    #[error("iteration is not contracting: difference grew to {difference:e} (Lipschitz estimate {lipschitz:.4})")]
    NotContracting { difference: f64, lipschitz: f64 },

    #[error("line search failed (gradient norm {gradient_norm:e})")]
    LineSearch { gradient_norm: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, QviError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(QviError::DimensionMismatch { expected, got })
    }
}
