use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("diffusion tensor is not uniformly elliptic on element {element} (min eigenvalue {min_eigenvalue})")]
    Ellipticity { element: usize, min_eigenvalue: f64 },

    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),

    #[error("linear solve did not converge: residual {residual:e} after {iterations} iterations")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("config `{key}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { key: String, line: Option<usize>, message: String },

    #[error("operation requires a linear problem")]
    NotLinear,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
