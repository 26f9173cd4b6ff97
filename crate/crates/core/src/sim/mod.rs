//! Synthetic fan-noise scenarios driving an edge agent and the cloud, with
//! detection-quality and bandwidth metrics.

pub mod metrics;
pub mod run;
pub mod scenario;

use std::io;

use serde::Serialize;
use thiserror::Error;

pub use metrics::{compute_metrics, table, to_csv, write_csv, FalsePositiveCheck, Metrics, CSV_COLUMNS, GRACE_WINDOWS};
pub use run::{cloud_config, edge_config, run_scenario, warm_start_model, LogicalClock, ScenarioRun, Topology, EDGE_ID, EQUIPMENT_ID};
pub use scenario::{Assertions, Drift, Fault, FaultProfile, ScenarioConfig};

use crate::cloud::CloudError;
use crate::edge::EdgeError;
use crate::features::FeatureError;
use crate::lof::LofError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Lof(#[from] LofError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssertionOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Evaluates the scenario's configured assertions against a finished run.
pub fn check_assertions(run: &ScenarioRun) -> Vec<AssertionOutcome> {
    let a = &run.config.assertions;
    let m = &run.metrics;
    let mut out = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        out.push(AssertionOutcome {
            name: name.into(),
            passed,
            detail,
        })
    };
    if let Some(min) = a.min_recall {
        push("recall", m.recall >= min, format!("{:.4} >= {min}", m.recall));
    }
    if let Some(min) = a.min_precision {
        push("precision", m.precision >= min, format!("{:.4} >= {min}", m.precision));
    }
    if let Some(max) = a.max_latency_windows {
        let (passed, shown) = match m.max_latency() {
            Ok(l) => (l.is_none_or(|l| l <= max), format!("{l:?}")),
            Err(()) => (false, "undetected fault".into()),
        };
        push("latency", passed, format!("{shown} <= {max}"));
    }
    if let Some(max) = a.max_bytes_ratio {
        push(
            "bytes_ratio",
            m.bytes_ratio() <= max,
            format!("{}/{} = {:.5} <= {max}", m.bytes_speed, m.bytes_raw, m.bytes_ratio()),
        );
    }
    if let Some(max) = a.max_orders {
        push("orders", m.orders_created <= max, format!("{} <= {max}", m.orders_created));
    }
    if a.retrain_reduces_false_positives {
        let (passed, detail) = match &run.false_positive_check {
            Some(c) => (
                c.after < c.before && c.after_version > c.before_version,
                format!(
                    "held-out false positives v{} {} -> v{} {}",
                    c.before_version, c.before, c.after_version, c.after
                ),
            ),
            None => (false, "no retrain cycle ran".into()),
        };
        push("retrain_fp", passed, detail);
    }
    out
}
