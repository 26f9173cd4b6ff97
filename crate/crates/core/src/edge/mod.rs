//! Edge agent: the speed layer. Windows are scored locally; only anomaly
//! events and extracted rules go upstream, and every window is spooled for
//! the batch layer.

mod agent;
pub mod config;
pub mod link;
pub mod spool;
pub mod upload;

use std::io;

use thiserror::Error;

pub use agent::{load_model, AgentStats, EdgeAgent, UpdateDecision, WindowOutcome};
pub use config::{EdgeConfig, CLOUD_ADDR_ENV};
pub use link::{CloudLink, LinkError, TcpLink, TopicStats, WireStats};
pub use spool::{closed_segments, read_segment, segment_id, SegmentInfo, Spool};
pub use upload::{chunk_sizes, upload_closed_segments, UploadReport, MAX_CHUNK_RECORDS};

use crate::features::FeatureError;
use crate::lof::LofError;

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("config: {0}")]
    Config(String),
    #[error("spool: {0}")]
    Spool(io::Error),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] LofError),
}
