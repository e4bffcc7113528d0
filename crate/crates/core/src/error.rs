use thiserror::Error;

/// Errors raised by the simulation, correlation and fitting routines.
///
/// `Validation` covers caller mistakes (bad parameters, unordered input);
/// everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("{axis} axis: {message}")]
    Range { axis: String, message: String },

    #[error("sample spec infeasible: placed {placed} of {requested} emitters after {attempts} attempts")]
    Infeasible {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("acquisition busy: {0}")]
    Busy(String),

    #[error("{0}")]
    NoSignal(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn range(axis: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Range {
            axis: axis.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from caller input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Range { .. } | Error::Format(_) | Error::Json(_)
        )
    }

    /// Name of the offending field, when the error refers to one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Validation { field, .. } => Some(field),
            Error::Range { axis, .. } => Some(axis),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
