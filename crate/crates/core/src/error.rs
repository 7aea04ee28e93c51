use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("weight matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("stage Newton iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    NewtonNonConvergence { residual: f64, iterations: usize },

    #[error("stage Jacobian is singular")]
    SingularStageJacobian,

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:e})")]
    DareNonConvergence { iterations: usize, residual: f64 },

    #[error("QP control Hessian block at stage {stage} is not positive definite after regularization")]
    NonConvexBlock { stage: usize },

    #[error("QP solver reached the iteration limit ({iterations}) with KKT residual {residual:e}")]
    QpMaxIterations { iterations: usize, residual: f64 },

    #[error("integration failed on shooting interval {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("SQP iteration {iteration} failed: {source}")]
    Sqp {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("closed-loop step {step} failed: {source}")]
    ClosedLoop {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_stage(self, stage: usize) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, stripped of stage/iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. }
            | Error::Sqp { source, .. }
            | Error::ClosedLoop { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
