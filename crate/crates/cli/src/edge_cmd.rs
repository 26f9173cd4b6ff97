use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use lambdapm_core::canonical;
use lambdapm_core::edge::{
    closed_segments, load_model, AgentStats, EdgeAgent, EdgeConfig, Spool, TcpLink, UploadReport, WireStats,
};
use lambdapm_core::sim::ScenarioConfig;
use lambdapm_core::system_clock;
use serde::Serialize;
use serde_json::json;
use tracing::info;

use crate::open_samples;

pub fn load_config(path: Option<&Path>) -> Result<EdgeConfig> {
    let cfg = match path {
        Some(p) => EdgeConfig::load(p)?,
        None => {
            let mut cfg = EdgeConfig::default();
            if let Ok(addr) = std::env::var(lambdapm_core::edge::CLOUD_ADDR_ENV) {
                cfg.cloud_addr = addr;
            }
            cfg
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn agent(cfg: EdgeConfig) -> Result<EdgeAgent<TcpLink>> {
    let link = TcpLink::new(cfg.cloud_addr.clone(), Duration::from_millis(cfg.request_timeout_ms));
    Ok(EdgeAgent::new(cfg, link, system_clock())?)
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub edge_id: String,
    pub model_version: u64,
    pub resumed_after: Option<u64>,
    pub stats: AgentStats,
    pub wire: WireStats,
    pub pending_events: usize,
}

pub enum Source {
    Samples(PathBuf),
    Scenario(PathBuf),
}

/// Streams a sample source through the agent until it ends.
pub fn run(cfg: EdgeConfig, source: Source) -> Result<RunSummary> {
    let mut agent = agent(cfg)?;
    let resumed_after = agent.resume_after();
    if let Some(w) = resumed_after {
        info!(window = w, "resuming after last spooled window");
    }
    match source {
        Source::Samples(path) => {
            let mut reader = open_samples(&path)?;
            agent.run(&mut reader)?;
            reader.finish()?;
        }
        Source::Scenario(path) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let scenario: ScenarioConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            scenario.validate()?;
            if scenario.window_size != agent.config().features.window_size {
                bail!(
                    "scenario window_size {} differs from edge window_size {}",
                    scenario.window_size,
                    agent.config().features.window_size
                );
            }
            agent.run(scenario.generate_stream())?;
        }
    }
    let pending_events = agent.pending_events();
    let edge_id = agent.config().edge_id.clone();
    let model_version = agent.model_version();
    let wire = agent.wire_stats().clone();
    let (stats, _) = agent.shutdown()?;
    Ok(RunSummary {
        edge_id,
        model_version,
        resumed_after,
        stats,
        wire,
        pending_events,
    })
}

/// Closes the open spool segment and uploads every closed one.
pub fn upload_batch(cfg: EdgeConfig) -> Result<UploadReport> {
    let mut agent = agent(cfg)?;
    let report = agent.upload_batch()?;
    agent.shutdown()?;
    Ok(report)
}

/// Model and spool state, read from disk without contacting the cloud.
pub fn status(cfg: &EdgeConfig) -> Result<serde_json::Value> {
    let model = load_model(cfg)?;
    let spool = Spool::open(&cfg.spool_dir, &cfg.edge_id, cfg.segment_windows)?;
    let closed = closed_segments(&cfg.spool_dir, &cfg.edge_id)?;
    let segments: Vec<_> = closed
        .iter()
        .map(|s| {
            let records = lambdapm_core::edge::read_segment(s).map(|r| r.len()).unwrap_or(0);
            json!({"segment_id": s.segment_id, "records": records})
        })
        .collect();
    Ok(json!({
        "edge_id": cfg.edge_id,
        "cloud_addr": cfg.cloud_addr,
        "model": {
            "version": model.version,
            "threshold": model.threshold,
            "reference_size": model.reference.len(),
        },
        "spool": {
            "dir": cfg.spool_dir,
            "last_window": spool.last_window(),
            "open_segment_records": spool.open_segment_records(),
            "closed_segments": segments,
        },
    }))
}

pub fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", canonical::to_pretty(value)?);
    Ok(())
}
