//! Wire and storage types for estimated-glucose telemetry.

use serde::{Deserialize, Serialize};

/// Allowed lead of a device clock over the server clock, seconds.
pub const CLOCK_SKEW: i64 = 300;
/// Exclusive upper bound for an estimate, mg/dl.
pub const GLUCOSE_MAX: f64 = 600.0;

/// What a device posts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryReading {
    pub patient_id: String,
    pub device_id: String,
    pub glucose_est: f64,
    pub model_id: String,
    pub timestamp: i64,
}

/// A stored reading: the posted fields plus server-assigned ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub seq: u64,
    pub patient_id: String,
    pub device_id: String,
    pub glucose_est: f64,
    pub model_id: String,
    pub timestamp: i64,
    pub received_at: i64,
}

impl TelemetryRecord {
    pub fn new(reading: TelemetryReading, seq: u64, received_at: i64) -> Self {
        TelemetryRecord {
            seq,
            patient_id: reading.patient_id,
            device_id: reading.device_id,
            glucose_est: reading.glucose_est,
            model_id: reading.model_id,
            timestamp: reading.timestamp,
            received_at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{field}: {reason}")]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl FieldError {
    fn new(field: &str, reason: &str) -> Self {
        FieldError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl TelemetryReading {
    /// Checks the reading as if received at `received_at`.
    pub fn validate(&self, received_at: i64) -> Result<(), FieldError> {
        if self.patient_id.is_empty() {
            return Err(FieldError::new("patient_id", "must not be empty"));
        }
        if self.device_id.is_empty() {
            return Err(FieldError::new("device_id", "must not be empty"));
        }
        if !(self.glucose_est > 0.0 && self.glucose_est < GLUCOSE_MAX) {
            return Err(FieldError::new("glucose_est", "glucose out of range"));
        }
        if self.timestamp > received_at.saturating_add(CLOCK_SKEW) {
            return Err(FieldError::new("timestamp", "timestamp in the future"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub records: u64,
}

/// Body of a rejected request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}
