use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EdgeError;
use crate::features::FeatureConfig;
use crate::lof::{LofParams, DEFAULT_CAPACITY};

pub const CLOUD_ADDR_ENV: &str = "EDGE_CLOUD_ADDR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeConfig {
    pub edge_id: String,
    pub equipment_id: String,
    pub cloud_addr: String,
    #[serde(flatten)]
    pub features: FeatureConfig,
    pub k: usize,
    pub eps: f64,
    pub capacity: usize,
    /// Threshold used when no initial model is given and the agent
    /// bootstraps its reference set from warmup windows.
    pub default_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_model: Option<PathBuf>,
    pub model_dir: PathBuf,
    pub spool_dir: PathBuf,
    /// Upload closed spool segments every T windows; `None` means only on
    /// an explicit `upload-batch`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_every_windows: Option<u64>,
    pub rule_streak: usize,
    pub rule_margin: f64,
    pub segment_windows: u64,
    pub max_pending: usize,
    pub request_timeout_ms: u64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig {
            edge_id: "edge-1".into(),
            equipment_id: "fan-1".into(),
            cloud_addr: "127.0.0.1:7700".into(),
            features: FeatureConfig::default(),
            k: LofParams::default().k,
            eps: LofParams::default().eps,
            capacity: DEFAULT_CAPACITY,
            default_threshold: 1.5,
            initial_model: None,
            model_dir: PathBuf::from("edge-models"),
            spool_dir: PathBuf::from("edge-spool"),
            batch_every_windows: None,
            rule_streak: 3,
            rule_margin: 0.1,
            segment_windows: 10_000,
            max_pending: 10_000,
            request_timeout_ms: 2_000,
        }
    }
}

impl EdgeConfig {
    /// Reads a config file, then applies the `EDGE_CLOUD_ADDR` override.
    pub fn load(path: &Path) -> Result<Self, EdgeError> {
        let text = fs::read_to_string(path).map_err(|e| EdgeError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: EdgeConfig =
            serde_json::from_str(&text).map_err(|e| EdgeError::Config(format!("{}: {e}", path.display())))?;
        if let Ok(addr) = std::env::var(CLOUD_ADDR_ENV) {
            if !addr.is_empty() {
                cfg.cloud_addr = addr;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lof_params(&self) -> LofParams {
        LofParams {
            k: self.k,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<(), EdgeError> {
        let bad = |m: String| Err(EdgeError::Config(m));
        if self.edge_id.is_empty() {
            return bad("edge_id must be non-empty".into());
        }
        if self.edge_id.contains(['/', '\\']) {
            return bad(format!("edge_id `{}` must not contain path separators", self.edge_id));
        }
        if self.batch_every_windows == Some(0) {
            return bad("batch_every_windows must be >= 1".into());
        }
        if self.rule_streak < 1 {
            return bad("rule_streak must be >= 1".into());
        }
        if self.segment_windows < 1 {
            return bad("segment_windows must be >= 1".into());
        }
        if self.capacity < self.k + 1 {
            return bad(format!("capacity {} must be >= k+1", self.capacity));
        }
        if !(self.default_threshold >= 1.0) {
            return bad("default_threshold must be >= 1".into());
        }
        if !(self.rule_margin >= 0.0) {
            return bad("rule_margin must be >= 0".into());
        }
        self.lof_params().validate().map_err(|e| EdgeError::Config(e.to_string()))?;
        self.features.validate().map_err(|e| EdgeError::Config(e.to_string()))?;
        Ok(())
    }
}
