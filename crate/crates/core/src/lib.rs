//! Trust-labeled IoT sensor datasets: ingestion of Intel Lab style logs,
//! untrustworthy-data synthesis, window features, classifiers and an
//! evaluation harness.

pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod models;
pub mod seed;
pub mod simulate;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
