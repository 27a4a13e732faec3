use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{what} {actual} exceeds configured cap {cap}")]
    CapExceeded {
        what: &'static str,
        actual: usize,
        cap: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unknown operator selector `{0}`")]
    UnknownSelector(String),
    #[error("mode index {index} out of range for {modes} modes")]
    NotAMode { index: usize, modes: usize },
    #[error("sector {n} out of range 0..={nmax}")]
    SectorOutOfRange { n: usize, nmax: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("probe set is empty")]
    EmptyProbeSet,
    #[error("solver did not converge after {iterations} iterations (best residual {best_residual:.3e})")]
    NotConverged {
        iterations: usize,
        best_residual: f64,
    },
    #[error("restricted operator is not positive definite (smallest eigenvalue {min_eigenvalue:.6e})")]
    Indefinite { min_eigenvalue: f64 },
    #[error("c0 = {0:.6e} is not positive")]
    NonPositiveC0(f64),
    #[error("malformed operator file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
