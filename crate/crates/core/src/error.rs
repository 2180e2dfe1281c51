use thiserror::Error;

use crate::pdcl::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller-supplied value is outside the operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// A NaN or infinity showed up where a finite value is required.
    #[error("non-finite value: {0}")]
    Numeric(String),

    /// A cache or state object was used with parameters it was not produced from.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("csv error at row {row}, column {column}: {msg}")]
    Csv { row: usize, column: String, msg: String },

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite Lagrangian; the report covers every
    /// iteration completed before the failure.
    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        report: Box<TrainReport>,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
