use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use photonbench::Error;
use serde::{Deserialize, Serialize};

use crate::API_SCHEMA;

/// Error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema: String,
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no {what} {id:?}"))
    }

    pub fn bad_request(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message).with_field(field)
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            schema: API_SCHEMA.into(),
            code: self.code.into(),
            message: self.message.clone(),
            field: self.field.clone(),
        }
    }
}

/// Short machine-readable code for a core error.
pub fn error_code(e: &Error) -> &'static str {
    match e {
        Error::Validation { .. } => "validation",
        Error::Range { .. } => "out_of_range",
        Error::Infeasible { .. } => "infeasible",
        Error::Fit(_) => "fit_failed",
        Error::Busy(_) => "busy",
        Error::NoSignal(_) => "no_signal",
        Error::Format(_) => "format",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Busy(_) => StatusCode::CONFLICT,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Error::Infeasible { .. } | Error::Fit(_) | Error::NoSignal(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError {
            status,
            code: error_code(&e),
            message: e.to_string(),
            field: e.field().map(str::to_owned),
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
