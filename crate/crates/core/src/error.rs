use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix parse error: {0}")]
    Parse(String),

    /// Row and column are 1-based.
    #[error("entry at row {row}, column {col} is not a finite number")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("exponential out of range: |t|*||A|| = {value:.6e} exceeds the guard {guard}")]
    ExpRange { value: f64, guard: f64 },

    #[error(
        "eigenvalue {re}{im:+}i has real part <= {tol}; \
         the generator must have eigenvalues with positive real parts"
    )]
    Hypothesis { re: f64, im: f64, tol: f64 },

    #[error("eigensolver did not converge for matrix {matrix}")]
    EigenFailure { matrix: String },

    #[error(
        "inconsistent rank sequence {ranks:?} at eigenvalue {re}{im:+}i; \
         the structure is ill-conditioned at this resolution, try a larger tolerance"
    )]
    Conditioning { re: f64, im: f64, ranks: Vec<usize> },

    #[error("root solver failed: {reason} (t = {t:.6e}, g = {g:.6e}, steps = {steps})")]
    Solver {
        reason: &'static str,
        t: f64,
        g: f64,
        steps: usize,
    },

    #[error(
        "packing would need about {estimate:.3e} cells (e^(-t*trace) * Vol(box)), above the cap of {cap}"
    )]
    CapExceeded { estimate: f64, cap: usize },

    #[error("points do not lie in a common fiber of the projection")]
    NotInFiber,

    #[error("matrix is singular")]
    Singular,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
