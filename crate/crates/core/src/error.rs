use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("fields live on different meshes or have different component counts")]
    MeshMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("nonlinearity returned a non-finite value at gradient {gradient:?}")]
    Evaluation { gradient: Vec<f64> },

    #[error(
        "nonlinear solve did not converge: residual {residual:e} after {iterations} iterations"
    )]
    NonConvergence { residual: f64, iterations: usize },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ensemble member {member} failed: {source}")]
    MemberFailed {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("study level {level} failed: {source}")]
    LevelFailed {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("value {value} outside of domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("unknown measure site (step {step}, element {element})")]
    UnknownSite { step: usize, element: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    /// True when the root cause is a failed nonlinear solve.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            Error::NonConvergence { .. } => true,
            Error::StepFailed { source, .. }
            | Error::MemberFailed { source, .. }
            | Error::LevelFailed { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
