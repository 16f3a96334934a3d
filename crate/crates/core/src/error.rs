use thiserror::Error;

/// Errors raised by the mesh engine, the solvers and the adaptive drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate triangle ({0:?}) has zero area")]
    DegenerateTriangle([usize; 3]),

    #[error("vertex {index} has non-finite coordinates")]
    NonFiniteVertex { index: usize },

    #[error("vertex index {index} out of range (mesh has {count} vertices)")]
    VertexOutOfRange { index: usize, count: usize },

    #[error("element {0} is not a leaf of the triangulation")]
    NotALeaf(usize),

    #[error("triangulations do not share the same initial mesh")]
    ForestMismatch,

    #[error("triangulation is not a refinement of the coarse triangulation")]
    NotNested,

    #[error("overlay bound violated: |overlay| + |T0| = {lhs} > |T| + |T'| = {rhs}")]
    OverlayBound { lhs: usize, rhs: usize },

    #[error("bulk parameter theta = {0} outside (0, 1]")]
    InvalidTheta(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data approximation exceeded the partition cap of {cap} elements (mu^2 = {mu2:e}, tol = {tol:e})")]
    ApproxCapExceeded { cap: usize, mu2: f64, tol: f64 },

    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:e})")]
    SolverFailed {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("solver failure on level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("too few usable records for a rate fit: {0} (need at least 4)")]
    TooFewRecords(usize),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown field specification `{0}`")]
    UnknownField(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
