use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh is empty")]
    EmptyMesh,

    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("element {element} out of range (mesh has {count} elements)")]
    ElementOutOfRange { element: usize, count: usize },

    #[error("degenerate element {element}: area {area:e}")]
    DegenerateElement { element: usize, area: f64 },

    #[error("generation mismatch: expected {expected}, found {found}")]
    GenerationMismatch { expected: u64, found: u64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value {value} at point ({x}, {y})")]
    NonFinite { value: f64, x: f64, y: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("unsupported quadrature order {0} (expected 1, 2, 4 or 6)")]
    QuadratureOrder(usize),

    #[error("energy increased from {before} to {after} at inner step {step}; step size is not admissible")]
    EnergyIncrease { step: usize, before: f64, after: f64 },

    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular local system on element {0}")]
    SingularLocalSystem(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Broad failure category, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Solver,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::UnknownExperiment(_)
            | Error::UnsupportedDomain(_)
            | Error::QuadratureOrder(_) => ErrorCategory::Config,
            Error::Io(_) => ErrorCategory::Io,
            _ => ErrorCategory::Solver,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
