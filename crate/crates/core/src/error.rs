use thiserror::Error;

/// Errors raised by grid construction, assembly, solvers and the driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid extent: {0}")]
    InvalidExtent(String),
    #[error("unsupported derivative: {0}")]
    UnsupportedDerivative(String),
    #[error("unsupported quadrature order {0} (expected 2, 3 or 4)")]
    UnsupportedOrder(usize),
    #[error("observation interval ({a}, {b}) is not strictly inside ({x_min}, {x_max})")]
    OmegaOutsideDomain { a: f64, b: f64, x_min: f64, x_max: f64 },
    #[error("observation interval is empty or inverted")]
    DegenerateOmega,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("weight evaluated at non-positive time t = {0}")]
    NonPositiveTime(f64),
    #[error("weight members do not match: {0}")]
    MemberMismatch(String),
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("singular time step at step {step}")]
    SingularStep { step: usize },
    #[error("singular flux mass matrix")]
    SingularBm,
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("unsupported space: {0}")]
    UnsupportedSpace(String),
    #[error("alpha = {0} is outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("regularization parameter eps = {0} must be positive")]
    NonPositiveEps(f64),
    #[error("factorization failure: {0}")]
    FactorizationFailure(String),
    #[error("primal block is singular (augmentation parameter must be positive)")]
    SingularAr,
    #[error("maximum iterations exceeded after {iterations} iterations (residual {residual:e})")]
    MaxIterationsExceeded { iterations: usize, residual: f64 },
    #[error("eigenvalue iteration did not converge: {0}")]
    NonConvergedEigen(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Solver,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Io(_) => ErrorCategory::Io,
            SingularStep { .. }
            | SingularBm
            | FactorizationFailure(_)
            | SingularAr
            | MaxIterationsExceeded { .. }
            | NonConvergedEigen(_) => ErrorCategory::Solver,
            _ => ErrorCategory::Config,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
