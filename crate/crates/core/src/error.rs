use std::fmt;

/// Errors produced by the library.
#[derive(Debug, Clone)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    InvalidArgument(String),
    /// A matrix failed the correlation-matrix invariants (symmetry, unit
    /// diagonal, positive semidefiniteness).
    InvariantViolation(String),
    /// An exact enumeration would exceed the configured capacity; the message
    /// names the Monte Carlo alternative.
    Capacity(String),
    /// An iterative projection stopped before reaching its tolerance. Carries
    /// the residual so callers can decide whether the last iterate is usable.
    Convergence { residual: f64, message: String },
    /// A numeric failure (non-finite value, degenerate input).
    Numeric(String),
    /// A malformed input file; `row` is 1-based and counts the header.
    Parse { row: usize, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::InvariantViolation(m) => write!(f, "invariant violation: {m}"),
            Error::Capacity(m) => write!(f, "capacity exceeded: {m}"),
            Error::Convergence { residual, message } => {
                write!(f, "did not converge (residual {residual:.3e}): {message}")
            }
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Parse { row, message } => write!(f, "parse error at row {row}: {message}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
