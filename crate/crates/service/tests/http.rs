use std::collections::BTreeSet;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use glucal_core::telemetry::{Ack, Health, Rejection, TelemetryReading, TelemetryRecord};
use glucal_service::{open_store, router};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn reading(patient: &str, glucose: f64, timestamp: i64) -> TelemetryReading {
    TelemetryReading {
        patient_id: patient.into(),
        device_id: "nir-01".into(),
        glucose_est: glucose,
        model_id: "mpr3-rm4".into(),
        timestamp,
    }
}

fn app(path: &Path) -> Router {
    router(open_store(path).unwrap())
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn post(app: &Router, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/readings")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

async fn post_reading(app: &Router, r: &TelemetryReading) -> u64 {
    let (status, body) = post(app, &serde_json::to_string(r).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice::<Ack>(&body).unwrap().seq
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn query(app: &Router, patient: &str, from: i64, to: i64) -> Vec<TelemetryRecord> {
    let (status, body) = get(app, &format!("/readings?patient={patient}&from={from}&to={to}")).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

#[tokio::test]
async fn post_then_get_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("store.ndjson"));
    assert!(query(&app, "p1", 0, i64::MAX).await.is_empty());

    let t = 1_700_000_000;
    let sent = reading("p1", 123.4, t);
    assert_eq!(post_reading(&app, &sent).await, 1);
    assert_eq!(post_reading(&app, &reading("p1", 130.0, t + 10)).await, 2);
    assert_eq!(post_reading(&app, &reading("p1", 140.0, t + 20)).await, 3);
    post_reading(&app, &reading("p2", 99.0, t)).await;

    let got = query(&app, "p1", t, t + 10).await;
    assert_eq!(got.len(), 2);
    let first = &got[0];
    assert_eq!(
        (first.seq, &first.patient_id, &first.device_id, first.glucose_est, &first.model_id, first.timestamp),
        (1, &sent.patient_id, &sent.device_id, sent.glucose_est, &sent.model_id, sent.timestamp)
    );
    assert!(first.received_at >= t);
    assert_eq!(got[1].timestamp, t + 10);
    assert!(query(&app, "p1", t + 21, t + 100).await.is_empty());

    let (status, body) = get(&app, "/health").await;
    assert_eq!(status, StatusCode::OK);
    let h: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!((h.status.as_str(), h.records), ("ok", 4));
}

#[tokio::test]
async fn results_follow_timestamp_then_seq() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("store.ndjson"));
    let ts = [50, 10, 30, 10, 50, 20];
    for t in ts {
        post_reading(&app, &reading("p", 100.0, t)).await;
    }
    let got = query(&app, "p", 0, 100).await;
    // brute-force oracle: stable sort of the posted order by timestamp
    let mut want: Vec<(i64, u64)> = ts.iter().enumerate().map(|(i, &t)| (t, i as u64 + 1)).collect();
    want.sort();
    assert_eq!(got.iter().map(|r| (r.timestamp, r.seq)).collect::<Vec<_>>(), want);
}

#[tokio::test]
async fn invalid_readings_are_rejected_with_a_field() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("store.ndjson"));
    for (r, field, reason) in [
        (reading("p", 0.0, 0), "glucose_est", "glucose out of range"),
        (reading("p", 600.0, 0), "glucose_est", "glucose out of range"),
        (reading("", 100.0, 0), "patient_id", "must not be empty"),
        (reading("p", 100.0, i64::MAX), "timestamp", "timestamp in the future"),
    ] {
        let (status, body) = post(&app, &serde_json::to_string(&r).unwrap()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        let rej: Rejection = serde_json::from_slice(&body).unwrap();
        assert_eq!(rej.field.as_deref(), Some(field));
        assert_eq!(rej.error, reason);
    }
    let (status, body) = post(&app, "{\"patient_id\": ").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    serde_json::from_slice::<Rejection>(&body).unwrap();
    let (status, _) = post(&app, "{\"patient_id\": \"p\"}").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    // nothing was stored, so the next good reading still gets seq 1
    assert_eq!(post_reading(&app, &reading("p", 100.0, 0)).await, 1);
}

#[tokio::test]
async fn malformed_ranges_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("store.ndjson"));
    for uri in [
        "/readings?patient=p&from=10&to=5",
        "/readings?from=0&to=5",
        "/readings?patient=p&to=5",
        "/readings?patient=p&from=0",
        "/readings?patient=p&from=x&to=5",
    ] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        serde_json::from_slice::<Rejection>(&body).unwrap();
    }
}

#[tokio::test]
async fn restart_keeps_every_acknowledged_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.ndjson");
    {
        let app = app(&path);
        for i in 0..5 {
            post_reading(&app, &reading("p", 100.0 + i as f64, 1000 + i)).await;
        }
    }
    let app = app(&path);
    let got = query(&app, "p", 0, 10_000).await;
    assert_eq!(got.iter().map(|r| r.seq).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
    assert_eq!(post_reading(&app, &reading("p", 100.0, 2000)).await, 6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_ingest_gives_dense_sequence_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.ndjson");
    let app = app(&path);
    let mut tasks = Vec::new();
    for c in 0..8 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let mut seqs = Vec::new();
            for i in 0..100 {
                seqs.push(post_reading(&app, &reading(&format!("p{c}"), 100.0, i)).await);
            }
            seqs
        }));
    }
    let mut all = Vec::new();
    for t in tasks {
        let seqs = t.await.unwrap();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
        all.extend(seqs);
    }
    let set: BTreeSet<u64> = all.iter().copied().collect();
    assert_eq!(set.len(), 800);
    assert_eq!(set, (1..=800).collect());
    let lines = glucal_service::store::read_log(&path).unwrap();
    assert_eq!(lines.lines().count(), 800);
    for c in 0..8 {
        assert_eq!(query(&app, &format!("p{c}"), 0, 100).await.len(), 100);
    }
}
