//! JSON-over-HTTP front end for a [`Session`], with a server-sent event
//! stream of the session's event log.

use std::convert::Infallible;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::ServiceError;
use crate::session::{CalibrationRequest, ScanRequest, Session, SourceRequest, SteerRequest};

/// Largest batch of events sent per wake-up of a stream.
const EVENT_BATCH: usize = 256;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self.code() {
            "busy" | "fault" | "interlock" | "uncalibrated" => StatusCode::CONFLICT,
            "not_found" => StatusCode::NOT_FOUND,
            "unreachable" => StatusCode::UNPROCESSABLE_ENTITY,
            "validation" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Unwraps a JSON body, turning extractor rejections into validation errors.
fn body<T: DeserializeOwned>(b: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    b.map(|Json(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

pub fn router(session: Session) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/steer", post(steer))
        .route("/source", post(source))
        .route("/reset", post(reset))
        .route("/scan", post(start_scan))
        .route("/scan/{id}", get(scan))
        .route("/scan/{id}/map", get(scan_map))
        .route("/scan/{id}/cancel", post(cancel))
        .route("/calibration", post(calibration))
        .route("/events", get(events))
        .with_state(session)
}

async fn status(State(s): State<Session>) -> impl IntoResponse {
    Json(s.status())
}

async fn steer(
    State(s): State<Session>,
    b: Result<Json<SteerRequest>, JsonRejection>,
) -> ApiResult<crate::session::SteerAck> {
    Ok(Json(s.steer(body(b)?)?))
}

async fn source(
    State(s): State<Session>,
    b: Result<Json<SourceRequest>, JsonRejection>,
) -> ApiResult<crate::session::SourceAck> {
    Ok(Json(s.source(body(b)?)?))
}

async fn reset(State(s): State<Session>) -> ApiResult<crate::session::StatusView> {
    Ok(Json(s.reset()?))
}

async fn start_scan(
    State(s): State<Session>,
    b: Result<Json<ScanRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<crate::session::ScanView>), ServiceError> {
    let id = s.start_scan(body(b)?)?;
    Ok((StatusCode::ACCEPTED, Json(s.scan(id)?)))
}

async fn scan(State(s): State<Session>, Path(id): Path<u64>) -> ApiResult<crate::session::ScanView> {
    Ok(Json(s.scan(id)?))
}

async fn scan_map(State(s): State<Session>, Path(id): Path<u64>) -> Result<Response, ServiceError> {
    let map = s.scan_map(id)?;
    let csv = cryoscan_core::mapfile::to_string(&map);
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn cancel(State(s): State<Session>, Path(id): Path<u64>) -> ApiResult<crate::session::ScanView> {
    Ok(Json(s.cancel(id)?))
}

async fn calibration(
    State(s): State<Session>,
    b: Result<Json<CalibrationRequest>, JsonRejection>,
) -> ApiResult<crate::session::CalibrationView> {
    let req = body(b)?;
    // Fitting a large map takes a while; keep it off the async workers.
    let view = tokio::task::spawn_blocking(move || s.calibrate(req))
        .await
        .map_err(|e| ServiceError::Fault(e.to_string()))??;
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    /// Resume after this sequence number.
    since: Option<u64>,
}

/// Streams the event log from `since` (or the `Last-Event-ID` header), then
/// follows it live. Each SSE message has `id` = seq and `event` = kind.
async fn events(
    State(s): State<Session>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let after = q.since.or(last_id).unwrap_or(0);
    let rx = s.subscribe();
    let stream = stream::unfold((s, rx, after), |(s, mut rx, after)| async move {
        loop {
            let batch = s.events_since(after, EVENT_BATCH);
            if let Some(last) = batch.last() {
                let next = last.seq;
                let items: Vec<Result<SseEvent, Infallible>> = batch
                    .into_iter()
                    .map(|e| {
                        Ok(SseEvent::default()
                            .id(e.seq.to_string())
                            .event(e.kind.clone())
                            .json_data(&e)
                            .expect("event serializes"))
                    })
                    .collect();
                return Some((stream::iter(items), (s, rx, next)));
            }
            rx.mark_unchanged();
            // Re-check after arming, in case an event landed in between.
            if !s.events_since(after, 1).is_empty() {
                continue;
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Sse::new(futures::StreamExt::flatten(stream)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}
