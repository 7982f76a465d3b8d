use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use glucal_core::telemetry::{Ack, Health, Rejection, TelemetryReading};
use serde::Deserialize;

use crate::store::Store;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/readings", get(query).post(ingest))
        .route("/health", get(health))
        .with_state(AppState { store })
}

fn now() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

fn reject(status: StatusCode, error: impl Into<String>, field: Option<&str>) -> Response {
    let body = Rejection {
        error: error.into(),
        field: field.map(str::to_string),
    };
    (status, Json(body)).into_response()
}

async fn ingest(State(state): State<AppState>, body: Result<Json<TelemetryReading>, JsonRejection>) -> Response {
    let reading = match body {
        Ok(Json(r)) => r,
        Err(JsonRejection::JsonDataError(e)) => return reject(StatusCode::UNPROCESSABLE_ENTITY, e.body_text(), None),
        Err(e) => return reject(StatusCode::BAD_REQUEST, e.body_text(), None),
    };
    let received_at = now();
    if let Err(e) = reading.validate(received_at) {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, e.reason, Some(&e.field));
    }
    // fsync blocks, so keep it off the async workers
    let store = state.store.clone();
    match tokio::task::spawn_blocking(move || store.append(reading, received_at)).await {
        Ok(Ok(rec)) => (StatusCode::CREATED, Json(Ack { seq: rec.seq })).into_response(),
        Ok(Err(e)) => {
            tracing::error!("append failed: {e}");
            reject(StatusCode::INTERNAL_SERVER_ERROR, "storage failure", None)
        }
        Err(e) => {
            tracing::error!("append task failed: {e}");
            reject(StatusCode::INTERNAL_SERVER_ERROR, "storage failure", None)
        }
    }
}

#[derive(Deserialize)]
struct RangeParams {
    patient: Option<String>,
    from: Option<i64>,
    to: Option<i64>,
}

async fn query(State(state): State<AppState>, params: Result<Query<RangeParams>, QueryRejection>) -> Response {
    let Query(p) = match params {
        Ok(q) => q,
        Err(e) => return reject(StatusCode::BAD_REQUEST, e.body_text(), None),
    };
    let Some(patient) = p.patient.filter(|s| !s.is_empty()) else {
        return reject(StatusCode::BAD_REQUEST, "patient is required", Some("patient"));
    };
    let Some(from) = p.from else {
        return reject(StatusCode::BAD_REQUEST, "from is required", Some("from"));
    };
    let Some(to) = p.to else {
        return reject(StatusCode::BAD_REQUEST, "to is required", Some("to"));
    };
    if from > to {
        return reject(StatusCode::BAD_REQUEST, "from must not exceed to", Some("from"));
    }
    Json(state.store.query(&patient, from, to)).into_response()
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        records: state.store.len(),
    })
}
