use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

use agentmark_core::orchestrator::OrchestratorError;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Engine(#[from] OrchestratorError),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Engine(e) => e.code(),
            ApiError::BadRequest(_) => "bad_request",
            ApiError::NotFound(_) => "not_found",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self.code() {
            "bad_request" => StatusCode::BAD_REQUEST,
            "not_found" | "unknown_session" => StatusCode::NOT_FOUND,
            "illegal_intervention" | "not_ready" | "session_finished" | "illegal_transition" => {
                StatusCode::CONFLICT
            }
            "invalid_intervention" | "invalid_config" => StatusCode::UNPROCESSABLE_ENTITY,
            "planner_unavailable" | "generator_unavailable" | "scorer_unavailable" => {
                StatusCode::BAD_GATEWAY
            }
            "plan_error" | "generator_error" | "session_failure" | "review_error"
            | "integration_error" | "protection_error" => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(code = self.code(), "{self}");
        }
        let body = ErrorBody {
            code: self.code().into(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}
