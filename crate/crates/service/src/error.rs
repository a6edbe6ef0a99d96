use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use thiserror::Error;

use crowdmot_core::store::StoreError;
use crowdmot_core::taskgen::QualityGate;
use crowdmot_core::workflow::WorkflowError;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{message}")]
    Invalid { path: Option<String>, message: String },
    #[error("{0}")]
    QualityGate(QualityGate),
    #[error("{what} not found")]
    NotFound { code: &'static str, what: String },
    #[error("{message}")]
    Conflict { code: &'static str, message: String },
    #[error("ticket for task {0} expired")]
    TicketExpired(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self::Invalid { path: None, message: message.into() }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::NotFound { code: "NotFound", what: what.into() }
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::Conflict { code, message: message.into() }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Invalid { .. } | ApiError::QualityGate(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::NotFound { .. } => StatusCode::NOT_FOUND,
            ApiError::Conflict { .. } => StatusCode::CONFLICT,
            ApiError::TicketExpired(_) => StatusCode::GONE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn body(&self) -> Value {
        let message = self.to_string();
        match self {
            ApiError::Invalid { path, .. } => json!({ "error": "SchemaViolation", "path": path, "message": message }),
            ApiError::QualityGate(gate) => {
                let mut body = serde_json::to_value(gate).expect("gates serialize");
                let obj = body.as_object_mut().expect("tagged enum");
                obj.insert("error".into(), "QualityGate".into());
                obj.insert("message".into(), message.into());
                body
            }
            ApiError::NotFound { code, .. } | ApiError::Conflict { code, .. } => {
                json!({ "error": code, "message": message })
            }
            ApiError::TicketExpired(_) => json!({ "error": "TicketExpired", "message": message }),
            ApiError::Internal(_) => json!({ "error": "Internal", "message": message }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(what) => ApiError::not_found(what),
            StoreError::Conflict(what) => ApiError::conflict("Conflict", format!("concurrent update of {what}")),
            StoreError::SchemaViolation { path, message } => ApiError::Invalid { path: Some(path), message },
            StoreError::InvalidKey(k) => ApiError::invalid(format!("invalid identifier {k:?}")),
            e @ (StoreError::VersionMismatch { .. }
            | StoreError::ParseError { .. }
            | StoreError::NonMonotonicFrames { .. }) => ApiError::invalid(e.to_string()),
            e @ (StoreError::Io { .. } | StoreError::Corrupt { .. }) => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        match e {
            WorkflowError::RoundIncomplete(t) => {
                ApiError::conflict("RoundIncomplete", format!("task {t} still has open slots"))
            }
            WorkflowError::Finished => ApiError::conflict("Finished", "the workflow has no open round"),
            WorkflowError::NoGroundTruth(v) => {
                ApiError::NotFound { code: "NoGroundTruth", what: format!("ground truth for video {v}") }
            }
            other => ApiError::invalid(other.to_string()),
        }
    }
}
