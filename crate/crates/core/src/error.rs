use thiserror::Error;

/// Every failure mode of the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("induced chain is not ergodic: {0}")]
    NonErgodicChain(String),

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("mixing horizon exceeded: max TV distance {tv:.3e} still above {eps:.3e} after {cap} steps")]
    MixingHorizonExceeded { cap: usize, tv: f64, eps: f64 },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter shape mismatch: expected {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("identity violated: {0}")]
    IdentityViolation(String),

    #[error("target is not representable: sup-norm residual {0:.3e}")]
    NotRepresentable(f64),

    #[error("the two forms of the mean-path direction disagree by {0:.3e}")]
    FormMismatch(f64),

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("initialization diagnostic failed: {0}")]
    InitDiagnosticFailed(String),

    #[error("non-finite parameters after step {step}")]
    NonFiniteUpdate { step: usize },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("failed to persist {path}: {message}")]
    PersistFailed { path: String, message: String },

    #[error("trace schema violation: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn persist(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::PersistFailed {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
