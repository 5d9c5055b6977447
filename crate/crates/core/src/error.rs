use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// The QP has an empty feasible set. `constraint` indexes the problem's
    /// general rows first, then the finite box bounds in variable order.
    #[error("infeasible QP: constraint {constraint} violated by {violation:.3e}")]
    Infeasible { constraint: usize, violation: f64 },

    #[error("QP solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("controller failed for robot {robot} at step {step}")]
    Controller {
        robot: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("scenario field `{field}` is invalid: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
