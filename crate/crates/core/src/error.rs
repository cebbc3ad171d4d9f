use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of a function.
    #[error("domain error in {func}: {detail}")]
    Domain { func: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration or file field failed validation.
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure{}: {message}", iteration.map(|k| format!(" at iteration {k}")).unwrap_or_default())]
    NumericalFailure { iteration: Option<usize>, message: String },

    /// The point handed to a routine that requires stationarity is not stationary.
    #[error("point is not stationary (active residual {residual:.3e}, inactive margin {margin:.3e})")]
    NotStationary { residual: f64, margin: f64 },

    /// Hard violations found while validating a solver configuration.
    #[error("invalid solver configuration: {}", errors.join("; "))]
    InvalidConfig { errors: Vec<String> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn numerical(iteration: Option<usize>, message: impl Into<String>) -> Self {
        Error::NumericalFailure {
            iteration,
            message: message.into(),
        }
    }
}
