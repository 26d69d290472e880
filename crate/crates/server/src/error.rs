use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use emlabel_core::Error;

/// An error as the API reports it: an HTTP status, a stable machine-readable
/// code and a human-readable message that never contains filesystem paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_argument", message)
    }

    pub fn stale_lease(message: impl Into<String>) -> Self {
        Self::new(StatusCode::LOCKED, "stale_lease", message)
    }

    pub fn internal() -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::Json(_) | Error::Taxonomy { .. } => {
                StatusCode::BAD_REQUEST
            }
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::AlreadyExists(_)
            | Error::DuplicateId(_)
            | Error::FailedPrecondition(_)
            | Error::DegenerateLabels(_)
            | Error::StaleModel { .. }
            | Error::InfeasibleConstraints { .. }
            | Error::InsufficientData(_) => StatusCode::CONFLICT,
            Error::TrainingFailure { .. } | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        // I/O messages carry file paths; report only that storage failed.
        let message = match &e {
            Error::Io(_) => "storage error".to_string(),
            other => other.to_string(),
        };
        Self {
            status,
            code: e.code(),
            message,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}
