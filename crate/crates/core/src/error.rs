use thiserror::Error;

#[derive(Debug, Error)]
pub enum CpscError {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A weight matrix row with no positive entry cannot be balanced.
    #[error("row {row} has no positive entry (isolated graph node)")]
    DegenerateRow { row: usize },

    #[error("{stage} did not converge within {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        stage: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite code for patch {patch}")]
    Numerical { patch: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<CpscError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CpscError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        CpscError::Argument(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        CpscError::Format {
            what,
            detail: detail.into(),
        }
    }

    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        CpscError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &CpscError {
        match self {
            CpscError::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CpscError>;
