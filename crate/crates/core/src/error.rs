use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// A symmetric factorization failed even after the jitter schedule was exhausted.
    #[error("singular covariance in {context}: smallest pivot {min_pivot:e} with jitter {jitter:e}")]
    SingularCovariance {
        context: &'static str,
        min_pivot: f64,
        jitter: f64,
    },

    /// A local ensemble-transform analysis produced a non-finite result.
    #[error("local analysis failed at state index {state_index}: {reason}")]
    LocalAnalysis { state_index: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{method} failed: {source}")]
    Method {
        method: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// The innermost error, with method annotations peeled off.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Method { source, .. } => source.root_cause(),
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root_cause(),
            Error::SingularCovariance { .. } | Error::LocalAnalysis { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
