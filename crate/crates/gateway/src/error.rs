use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use reconlab_core::orchestrator::OrchestratorError;
use reconlab_core::rawdata::FormatError;
use reconlab_core::recon::ReconError;
use reconlab_core::stats::StatsError;
use reconlab_core::study::StudyError;
use reconlab_core::transfer::TransferError;
use reconlab_core::vault::VaultError;
use serde::{Deserialize, Serialize};

/// Wire error: an HTTP status plus a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn unauthorized(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, code, message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let body = ErrorEnvelope {
            error: ErrorBody {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<TransferError> for ApiError {
    fn from(e: TransferError) -> Self {
        let status = match &e {
            TransferError::UnknownSession(_) => StatusCode::NOT_FOUND,
            TransferError::NotOpen(_)
            | TransferError::Incomplete { .. }
            | TransferError::ConflictingChunk(_) => StatusCode::CONFLICT,
            TransferError::DigestMismatch { .. } | TransferError::ChunkDigestMismatch(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            TransferError::Vault(v) => vault_status(v),
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

fn vault_status(e: &VaultError) -> StatusCode {
    match e {
        VaultError::NotFound(_) => StatusCode::NOT_FOUND,
        VaultError::Purged(_) => StatusCode::GONE,
        VaultError::InvalidId(_) | VaultError::EmptyPlaintext => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<VaultError> for ApiError {
    fn from(e: VaultError) -> Self {
        ApiError::new(vault_status(&e), e.code(), e.to_string())
    }
}

impl From<ReconError> for ApiError {
    fn from(e: ReconError) -> Self {
        let status = match e {
            ReconError::UnknownBackend(_) => StatusCode::NOT_FOUND,
            ReconError::Backend(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Recon(r) => r.into(),
            OrchestratorError::UnknownDataset(_) | OrchestratorError::UnknownJob(_) => {
                ApiError::not_found(e.code(), e.to_string())
            }
            OrchestratorError::NoResult(_) => ApiError::conflict(e.code(), e.to_string()),
            OrchestratorError::InvalidPool(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match e {
            StudyError::UnknownStudy(_) | StudyError::UnknownCase(_) => StatusCode::NOT_FOUND,
            StudyError::NotAssigned(_) => StatusCode::FORBIDDEN,
            StudyError::Closed | StudyError::StillOpen => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<StatsError> for ApiError {
    fn from(e: StatsError) -> Self {
        let status = match e {
            StatsError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            StatsError::UnknownView(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string())
    }
}
