//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GleError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Lyapunov operator is singular (eigenvalue pair sums to zero, |λ_i + λ_j| = {min_sum:.3e})")]
    SingularLyapunov { min_sum: f64 },

    #[error("Schur decomposition did not converge")]
    SchurFailed,

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e}, tolerance {tol:.3e})")]
    NotPositiveSemidefinite { min_eig: f64, tol: f64 },

    #[error("quadrature tolerance {tol:.3e} not reached within subdivision budget (error estimate {estimate:.3e})")]
    QuadratureTolerance { tol: f64, estimate: f64 },

    #[error("model validation failed: {0}")]
    Validation(String),

    #[error("non-positive mass at coordinate {index}: {value}")]
    NonPositiveMass { index: usize, value: f64 },

    #[error("basis is rank-deficient or violates partition invariants: {0}")]
    InvalidBasis(String),

    #[error("singular moment: {0}")]
    SingularMoment(String),

    #[error("singular coefficient system for order-{order} fit (residual {residual:.3e})")]
    SingularSystem { order: usize, residual: f64 },

    #[error("embedded drift is not Hurwitz (spectral abscissa {abscissa:.3e}); fit rejected")]
    Stability { abscissa: f64 },

    #[error("FDT-consistent noise covariance is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    FdtInfeasible { min_eig: f64 },

    #[error("order-0 kernel is a Dirac delta and cannot be evaluated pointwise")]
    DeltaKernel,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GleError>;

impl GleError {
    /// Coarse failure category, used by the CLI to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        use GleError::*;
        match self {
            Validation(_) | NonPositiveMass { .. } | InvalidBasis(_) | DimensionMismatch(_)
            | NonSquare { .. } | NonFinite => ErrorCategory::Validation,
            SingularMoment(_) | SingularSystem { .. } => ErrorCategory::Fitting,
            Stability { .. } => ErrorCategory::Stability,
            FdtInfeasible { .. } | NotPositiveSemidefinite { .. } => ErrorCategory::Fdt,
            _ => ErrorCategory::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Fitting,
    Stability,
    Fdt,
    Other,
}
