use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A set assumed compact is unbounded along some direction.
    #[error("set is unbounded: {0}")]
    Unbounded(String),

    #[error("set is empty: {0}")]
    EmptySet(String),

    #[error("contraction rate λ = {lambda} unreachable: {reason}")]
    ContractionUnreachable { lambda: f64, reason: String },

    #[error(
        "terminal cost decrease unsatisfiable with LQR gain over the initial parameter set; \
         shrink the set or retune Q, R"
    )]
    TerminalCostUnsatisfiable,

    #[error("pair (A, B) is not stabilizable: {0}")]
    NotStabilizable(String),

    /// Intersection of the parameter set with the non-falsified set is empty.
    #[error("model falsified at step {step}: no parameter is consistent with the data")]
    ModelFalsified { step: usize },

    #[error("tube MPC problem infeasible at step {step}")]
    Infeasible { step: usize },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("artifact validation failed: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
