//! Calibration and evaluation toolkit for a three-channel near-infrared
//! glucometer.
//!
//! The crate covers the whole offline pipeline: synthetic acquisition of
//! detector voltages, polynomial / logistic / SVR / neural calibration
//! models, the four pointwise error measures, Clarke error grid analysis,
//! and cross-validation / channel-combination studies. Telemetry record
//! types shared with the HTTP service live in [`telemetry`].

pub mod acquisition;
pub mod basis;
pub mod clarke;
pub mod data;
pub mod dnn;
mod error;
pub mod lm;
pub mod metrics;
pub mod model_io;
pub mod pipeline;
pub mod regression;
pub mod table;
pub mod telemetry;

pub use data::{Channel, ChannelSet, Cohort, Dataset, Prandial, Provenance, SampleRecord, Sex};
pub use error::{Error, ErrorKind, Result};
