use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("service misconfigured: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] oralscan_core::Error),
}

#[derive(Serialize)]
struct ErrorBody {
    category: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
}

impl ServiceError {
    pub fn category(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Precondition(_) => "precondition",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Config(_) => "config",
            ServiceError::Core(e) => e.category(),
        }
    }

    pub fn status(&self) -> StatusCode {
        use oralscan_core::Error as E;
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Precondition(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Config(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Core(e) => match e {
                E::Validation { .. } | E::InvalidGeometry(_) | E::Image(_) | E::Json(_) | E::Shape(_) => {
                    StatusCode::BAD_REQUEST
                }
                E::Config(_) | E::CorruptParams(_) => StatusCode::SERVICE_UNAVAILABLE,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let field = match &self {
            ServiceError::Core(oralscan_core::Error::Validation { field, .. }) => Some(field.clone()),
            _ => None,
        };
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = ErrorBody {
            category: self.category(),
            message: self.to_string(),
            field,
        };
        (status, Json(body)).into_response()
    }
}
