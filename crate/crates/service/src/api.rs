//! HTTP routes over a [`SessionStore`].

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream, StreamExt};
use ips_core::{
    Evaluation, FingerprintSample, LocalizeError, Observation, PositionEstimate, SurveyArea, TrainConfig,
    TrainingReport, TruthObservation,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

use crate::store::{SessionInfo, SessionStore, StoreError};

/// Largest request body accepted (survey uploads can be large).
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    /// Flips to `true` when the server starts shutting down; open streams
    /// end so the server can drain.
    pub shutdown: watch::Receiver<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

pub struct ApiError(StoreError);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            StoreError::SessionNotFound(_) => (StatusCode::NOT_FOUND, "SessionNotFound"),
            StoreError::WrongState { .. } => (StatusCode::CONFLICT, "WrongState"),
            StoreError::NotTrained(_) => (StatusCode::CONFLICT, "NotTrained"),
            StoreError::InvalidArea(_) => (StatusCode::BAD_REQUEST, "InvalidArea"),
            StoreError::ValidationFailed { .. } => (StatusCode::BAD_REQUEST, "ValidationFailed"),
            StoreError::InvalidRequest(_) => (StatusCode::BAD_REQUEST, "InvalidRequest"),
            StoreError::Localize(LocalizeError::InsufficientOverlap { .. }) => {
                (StatusCode::BAD_REQUEST, "InsufficientOverlap")
            }
            StoreError::Localize(LocalizeError::EmptyRadioMap) => (StatusCode::CONFLICT, "EmptyRadioMap"),
            StoreError::Localize(_) => (StatusCode::BAD_REQUEST, "InvalidObservation"),
            StoreError::TrainingFailed { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "TrainingFailed"),
            StoreError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "StorageError"),
        };
        (status, Json(ErrorBody { error: code.into(), detail: self.0.to_string() })).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(StoreError::InvalidRequest(e.to_string())))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/sessions", post(create_session).get(list_sessions))
        .route("/api/v1/sessions/{id}", get(session_info))
        .route("/api/v1/sessions/{id}/samples", post(ingest))
        .route("/api/v1/sessions/{id}/train", post(train))
        .route("/api/v1/sessions/{id}/radiomap", get(radiomap))
        .route("/api/v1/sessions/{id}/localize", post(localize))
        .route("/api/v1/sessions/{id}/eval", post(eval))
        .route("/api/v1/sessions/{id}/stream", get(stream))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    area: SurveyArea,
}

#[derive(Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> Result<Json<CreateResponse>, ApiError> {
    let req: CreateRequest = parse(&body)?;
    let session_id = st.store.create_session(req.area).await?;
    Ok(Json(CreateResponse { session_id }))
}

async fn list_sessions(State(st): State<AppState>) -> Json<Vec<String>> {
    Json(st.store.session_ids())
}

async fn session_info(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    Ok(Json(st.store.info(&id).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestRequest {
    samples: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
pub struct IngestResponse {
    pub accepted: usize,
}

async fn ingest(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<IngestResponse>, ApiError> {
    let req: IngestRequest = parse(&body)?;
    // Decode one by one so a schema error names the offending record.
    let mut batch = Vec::with_capacity(req.samples.len());
    for (index, raw) in req.samples.into_iter().enumerate() {
        let sample: FingerprintSample = serde_json::from_value(raw)
            .map_err(|e| ApiError(StoreError::ValidationFailed { index, reason: e.to_string() }))?;
        batch.push(sample);
    }
    let accepted = st.store.ingest(&id, batch).await?;
    Ok(Json(IngestResponse { accepted }))
}

async fn train(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TrainingReport>, ApiError> {
    let config: TrainConfig = if body.iter().all(u8::is_ascii_whitespace) { TrainConfig::default() } else { parse(&body)? };
    Ok(Json(st.store.train(&id, config).await?))
}

async fn radiomap(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let bytes = st.store.radiomap_json(&id).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalizeRequest {
    observation: Observation,
}

async fn localize(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<PositionEstimate>, ApiError> {
    let req: LocalizeRequest = parse(&body)?;
    Ok(Json(st.store.localize(&id, req.observation).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRequest {
    observations_with_truth: Vec<TruthObservation>,
}

async fn eval(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Evaluation>, ApiError> {
    let req: EvalRequest = parse(&body)?;
    Ok(Json(st.store.evaluate(&id, req.observations_with_truth).await?))
}

async fn stream(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = st.store.subscribe(&id).await?;
    let mut shutdown = st.shutdown.clone();
    let events = stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(ev) => {
                let event = Event::default().json_data(&ev).expect("events serialize");
                Some((Ok(event), rx))
            }
            // A lagging client is dropped rather than slowing everyone down.
            Err(broadcast::error::RecvError::Lagged(_)) | Err(broadcast::error::RecvError::Closed) => None,
        }
    })
    .take_until(async move {
        let _ = shutdown.wait_for(|&stop| stop).await;
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
