//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or integer argument is outside its admissible range.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// Vector/matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An input configuration is too close to singular to be meaningful
    /// (e.g. overlapping particles).
    #[error("ill-conditioned configuration: {0}")]
    IllConditioned(String),

    /// A step size violates the invertibility/stability regime of the
    /// step-operator construction.
    #[error("outside stability domain: {0}")]
    StabilityDomain(String),

    /// A linear stage system could not be factored.
    #[error("singular system: {0}")]
    Singular(String),

    /// An iterative stage solver ran out of iterations.
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    /// The request exceeds a hard resource guard (dimension, nonzeros, ...).
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// The spectrum admits an exact eigenvalue-sum resonance.
    #[error("resonant spectrum: {0}")]
    Resonance(String),

    /// Eigendecomposition failed or the eigenvector basis is numerically rank
    /// deficient.
    #[error("matrix not diagonalizable: {0}")]
    Diagonalizability(String),

    /// No truncation level within the ceiling meets the requested error.
    #[error("truncation infeasible: achievable error {achievable:.3e} > requested {requested:.3e}")]
    TruncationInfeasible { achievable: f64, requested: f64 },

    /// Order fitting was asked to fit degenerate data.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// A solution grew beyond the overflow guard.
    #[error("divergent solution: {0}")]
    Divergence(String),

    /// The operation is not defined for this system type.
    #[error("unsupported system: {0}")]
    Unsupported(String),

    /// One or more verification checks failed.
    #[error("verification failed: {0}")]
    Verification(String),

    /// Config parse/validation failure with source position.
    #[error("config error at line {line} ({field}): {message}")]
    Config {
        line: usize,
        field: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 capability/resource,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Capability(_) => 3,
            _ => 1,
        }
    }
}
