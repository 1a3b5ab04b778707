//! HTTP routes. Model work runs on the blocking pool.

use axum::extract::{Path, Query, State};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hyperpheno_core::ehr::icd9::Icd9;
use serde::Deserialize;

use crate::error::ServiceError;
use crate::intervention::{intervene, InterveneRequest};
use crate::payload::{explain_patient, record_payload, CodeInfo};
use crate::state::AppState;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/patients/{id}/record", get(get_record))
        .route("/patients/{id}/explanation", get(get_explanation))
        .route("/patients/{id}/intervene", post(post_intervene))
        .route("/sessions/{id}", get(get_session))
        .route("/codes/{icd9}", get(get_code))
        .with_state(state)
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))?
}

async fn get_record(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let r = s.dataset.record(&id).map_err(|_| ServiceError::UnknownPatient(id.clone()))?;
    Ok(Json(record_payload(&s.dataset, r)).into_response())
}

async fn get_explanation(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    s.model()?;
    let payload = blocking(move || explain_patient(&s.model()?.model, &s.dataset, &id, s.top_k)).await?;
    Ok(Json(payload).into_response())
}

async fn post_intervene(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<InterveneRequest>,
) -> Result<Response, ServiceError> {
    s.model()?;
    let out = blocking(move || intervene(s.model()?, &s.dataset, &s.sessions, &id, &req, s.top_k)).await?;
    Ok(Json(out).into_response())
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    revision: Option<usize>,
}

async fn get_session(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
) -> Result<Response, ServiceError> {
    let session = blocking(move || s.sessions.load(&id)).await?;
    Ok(match q.revision {
        None => Json(session).into_response(),
        Some(n) => {
            let id = session.header.session_id.clone();
            let rev = session
                .revisions
                .into_iter()
                .nth(n)
                .ok_or(ServiceError::UnknownRevision(id, n))?;
            Json(rev).into_response()
        }
    })
}

async fn get_code(State(s): State<AppState>, Path(code): Path<String>) -> Result<Response, ServiceError> {
    if Icd9::parse(&code).is_none() {
        return Err(ServiceError::BadCode(code));
    }
    Ok(Json(CodeInfo::lookup(&code, &s.dataset)).into_response())
}
