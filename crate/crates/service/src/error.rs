use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown patient {0:?}")]
    UnknownPatient(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {session:?} belongs to patient {expected:?}, not {got:?}")]
    SessionPatientMismatch {
        session: String,
        expected: String,
        got: String,
    },
    #[error("session {0:?} has no revision {1}")]
    UnknownRevision(String, usize),
    #[error("invalid session id {0:?}")]
    BadSessionId(String),
    #[error("invalid ICD-9 code {0:?}")]
    BadCode(String),
    #[error("edit {index}: {message}")]
    InvalidEdit { index: usize, message: String },
    #[error("session {0:?} was opened against different model parameters")]
    ModelChanged(String),
    #[error("no model loaded")]
    NoModel,
    #[error("model has {model} codes but the dataset has {data} (or they are ordered differently)")]
    VocabularyMismatch { model: usize, data: usize },
    #[error("{path}: line {line}: {message}")]
    CorruptLog { path: String, line: usize, message: String },
    #[error(transparent)]
    Core(#[from] hyperpheno_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownPatient(_) | Self::UnknownSession(_) | Self::UnknownRevision(..) | Self::BadCode(_) => {
                StatusCode::NOT_FOUND
            }
            Self::BadSessionId(_) => StatusCode::BAD_REQUEST,
            Self::SessionPatientMismatch { .. } | Self::ModelChanged(_) => StatusCode::CONFLICT,
            Self::InvalidEdit { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Self::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() && status != StatusCode::SERVICE_UNAVAILABLE {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
