//! Calibration models mapping detector voltages to glucose.
//!
//! All models z-score their input channels with parameters frozen at fit
//! time, so stored models carry their own [`Standardization`].

mod logistic;
mod mpr;
mod svr;

pub use logistic::{fit_logistic, LogisticModel};
pub use mpr::{fit_mpr, fit_mpr_with, lstsq, MprOptions, PolynomialModel, RANK_COND_LIMIT};
pub use svr::{fit_svr, SvrModel, SvrParams, KKT_TOL};

use serde::{Deserialize, Serialize};

use crate::data::{Channel, CHANNEL_RANGES};
use crate::{ChannelSet, Error, Result};

/// Per-variable z-score parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization {
        mean: 0.0,
        std: 1.0,
    };

    /// Population mean and standard deviation; fails on zero spread.
    pub fn fit(values: impl IntoIterator<Item = f64>, what: &'static str) -> Result<Self> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::ZeroVariance(what));
        }
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.std > 0.0 && self.std.is_finite() && self.mean.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput("standardization stddev must be positive".into()))
        }
    }
}

/// Fits per-column standardization of the rows.
pub(crate) fn fit_columns(rows: &[Vec<f64>], n_vars: usize) -> Result<Vec<Standardization>> {
    (0..n_vars)
        .map(|j| Standardization::fit(rows.iter().map(|r| r[j]), "input channel"))
        .collect()
}

pub(crate) fn standardize(x: &[f64], scaling: &[Standardization]) -> Result<Vec<f64>> {
    if x.len() != scaling.len() {
        return Err(Error::ArityMismatch {
            expected: scaling.len(),
            got: x.len(),
        });
    }
    Ok(x.iter().zip(scaling).map(|(v, s)| s.apply(*v)).collect())
}

/// Logs a warning when a voltage sits more than 20% of the channel span
/// outside its measurement range.
pub(crate) fn warn_if_out_of_range(channels: ChannelSet, x: &[f64]) {
    for (c, v) in channels.channels().iter().zip(x) {
        let (lo, hi) = CHANNEL_RANGES[c.index()];
        let slack = 0.2 * (hi - lo);
        if *v < lo - slack || *v > hi + slack {
            tracing::warn!(channel = channel_name(*c), volts = v, "input voltage far outside measurement range");
        }
    }
}

fn channel_name(c: Channel) -> &'static str {
    match c {
        Channel::V1 => "v1",
        Channel::V2 => "v2",
        Channel::V3 => "v3",
    }
}
