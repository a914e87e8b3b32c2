use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalcError {
    #[error("invalid generator descriptor: {0}")]
    Descriptor(String),
    #[error("mesh is not a manifold: {0}")]
    NonManifold(String),
    #[error("non-positive measure weight: {0}")]
    NonPositiveWeight(String),
    #[error("cannot read mesh file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mesh file: {0}")]
    MeshFormat(String),
    #[error("fields live on different spaces or have mismatched shapes: {0}")]
    Mismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("no spectral gap at the kernel threshold: {0}")]
    AmbiguousKernel(String),
    #[error("transport problem is infeasible: {0}")]
    Infeasible(String),
}

impl CalcError {
    /// Whether a numerical method failed, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, CalcError::Solver(_) | CalcError::AmbiguousKernel(_) | CalcError::Infeasible(_))
    }
}

pub type Result<T> = std::result::Result<T, CalcError>;
