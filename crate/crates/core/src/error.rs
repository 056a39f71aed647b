//! Error taxonomy shared by every module.
//!
//! The variants map onto the process exit codes used by the binary:
//! usage and geometry problems exit 1, solver failures exit 2 and
//! acceptance failures exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, malformed config, or incompatible inputs.
    #[error("usage error: {0}")]
    Usage(String),

    /// Degenerate or unmeshable domain data.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A requested domain perturbation folds the mesh over itself.
    #[error("perturbation too large: {0}")]
    PerturbationTooLarge(String),

    /// A state left the admissible region (positivity floor violated).
    #[error("domain violation: {0}")]
    DomainViolation(String),

    /// Newton iteration did not converge.
    #[error("newton solver failed: {0}")]
    NewtonFailure(String),

    /// The bordered continuation system is singular or nearly so.
    #[error("near-fold degeneracy: {0}")]
    NearFold(String),

    /// Branch tracing could not advance even at the minimal step size.
    #[error("branch stalled: {0}")]
    BranchStalled(String),

    /// Eigenvalue iteration failed to converge.
    #[error("eigensolver failed: {0}")]
    EigenFailure(String),

    /// Free-energy minimization failed to converge.
    #[error("variational solver failed: {0}")]
    VariationalFailure(String),

    /// An acceptance criterion failed in `verify`.
    #[error("acceptance failure: {0}")]
    Acceptance(String),

    /// Internal consistency guard tripped (assembly or factorization bug).
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the binary should report for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Geometry(_) | Error::PerturbationTooLarge(_) => 1,
            Error::Acceptance(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
