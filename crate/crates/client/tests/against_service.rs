use glucal_client::{ClientError, TelemetryClient};
use glucal_core::telemetry::TelemetryReading;
use tokio::sync::oneshot;

struct Running {
    client: TelemetryClient,
    stop: oneshot::Sender<()>,
    handle: tokio::task::JoinHandle<()>,
}

async fn start(store: &std::path::Path) -> Running {
    let listener = glucal_service::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let store = glucal_service::open_store(store).unwrap();
    let (stop, rx) = oneshot::channel();
    let handle = tokio::spawn(async move {
        glucal_service::serve_on(listener, store, async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    });
    Running {
        client: TelemetryClient::new(format!("http://{addr}/")),
        stop,
        handle,
    }
}

impl Running {
    async fn shutdown(self) {
        self.stop.send(()).unwrap();
        self.handle.await.unwrap();
    }
}

fn reading(glucose: f64, timestamp: i64) -> TelemetryReading {
    TelemetryReading {
        patient_id: "patient-7".into(),
        device_id: "nir-02".into(),
        glucose_est: glucose,
        model_id: "mpr3-rm4".into(),
        timestamp,
    }
}

#[tokio::test]
async fn round_trip_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("telemetry.ndjson");
    let svc = start(&path).await;
    assert_eq!(svc.client.health().await.unwrap().records, 0);
    for i in 0..5 {
        assert_eq!(svc.client.post_reading(&reading(100.0 + i as f64, 500 + i)).await.unwrap(), i as u64 + 1);
    }
    let got = svc.client.query("patient-7", 500, 504).await.unwrap();
    assert_eq!(got.len(), 5);
    assert_eq!(got[2].glucose_est, 102.0);
    svc.shutdown().await;

    let svc = start(&path).await;
    assert_eq!(svc.client.health().await.unwrap().records, 5);
    assert_eq!(svc.client.query("patient-7", 0, 1000).await.unwrap().len(), 5);
    assert_eq!(svc.client.post_reading(&reading(90.0, 600)).await.unwrap(), 6);
    svc.shutdown().await;
}

#[tokio::test]
async fn rejections_carry_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(&dir.path().join("t.ndjson")).await;
    match svc.client.post_reading(&reading(0.0, 1)).await {
        Err(ClientError::Rejected { status, rejection }) => {
            assert_eq!(status.as_u16(), 422);
            assert_eq!(rejection.field.as_deref(), Some("glucose_est"));
            assert_eq!(rejection.error, "glucose out of range");
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    match svc.client.query("patient-7", 10, 0).await {
        Err(ClientError::Rejected { status, .. }) => assert_eq!(status.as_u16(), 400),
        other => panic!("expected rejection, got {other:?}"),
    }
    svc.shutdown().await;
}
