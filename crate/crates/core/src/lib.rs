//! Lambda-architecture predictive maintenance.
//!
//! The speed layer runs on edge agents ([`edge`]): sensor windows become
//! spectral feature vectors ([`features`]), are scored by an exact Local
//! Outlier Factor model ([`lof`]), and only anomalous windows and extracted
//! detection rules are sent upstream over the line protocol ([`protocol`]).
//! The cloud ([`cloud`]) evaluates rules, predicts failures, drives
//! maintenance orders to an ERP stub, and runs the batch layer: raw spool
//! uploads, retraining, and model distribution back to the edges. The
//! [`sim`] module wires both sides to synthetic fan-noise scenarios and
//! measures detection quality and bandwidth.

pub mod canonical;
pub mod cloud;
pub mod edge;
pub mod features;
pub mod lof;
pub mod protocol;
pub mod sim;

pub use features::{FeatureConfig, FeatureExtractor, FeatureVector};
pub use lof::{DetectionRule, LofParams, ModelSnapshot};
pub use protocol::{Envelope, Payload, Topic};

use std::sync::Arc;

/// Source of `timestamp_ms` values. The simulator swaps in a logical clock
/// so that runs are reproducible byte for byte.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn system_clock() -> Clock {
    Arc::new(now_ms)
}

pub fn fixed_clock(ms: u64) -> Clock {
    Arc::new(move || ms)
}
