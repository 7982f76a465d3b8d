//! Async HTTP client for the telemetry service.

use glucal_core::telemetry::{Ack, Health, Rejection, TelemetryReading, TelemetryRecord};
use reqwest::StatusCode;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("rejected ({status}): {}", rejection_text(.rejection))]
    Rejected { status: StatusCode, rejection: Rejection },
    #[error("unexpected status {0}")]
    Status(StatusCode),
}

fn rejection_text(r: &Rejection) -> String {
    match &r.field {
        Some(f) => format!("{f}: {}", r.error),
        None => r.error.clone(),
    }
}

#[derive(Clone, Debug)]
pub struct TelemetryClient {
    base: String,
    http: reqwest::Client,
}

impl TelemetryClient {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        TelemetryClient {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn post_reading(&self, reading: &TelemetryReading) -> Result<u64, ClientError> {
        let resp = self.http.post(format!("{}/readings", self.base)).json(reading).send().await?;
        Ok(decode::<Ack>(resp, StatusCode::CREATED).await?.seq)
    }

    pub async fn query(&self, patient: &str, from: i64, to: i64) -> Result<Vec<TelemetryRecord>, ClientError> {
        let resp = self
            .http
            .get(format!("{}/readings", self.base))
            .query(&[("patient", patient.to_string()), ("from", from.to_string()), ("to", to.to_string())])
            .send()
            .await?;
        decode(resp, StatusCode::OK).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        decode(resp, StatusCode::OK).await
    }
}

async fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Response, expect: StatusCode) -> Result<T, ClientError> {
    let status = resp.status();
    if status == expect {
        return Ok(resp.json().await?);
    }
    match resp.json::<Rejection>().await {
        Ok(rejection) => Err(ClientError::Rejected { status, rejection }),
        Err(_) => Err(ClientError::Status(status)),
    }
}
