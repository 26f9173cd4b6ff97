use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;
use tracing::{debug, info, warn};

use super::config::EdgeConfig;
use super::link::{CloudLink, WireStats};
use super::spool::Spool;
use super::upload::{upload_closed_segments, UploadReport};
use super::EdgeError;
use crate::features::{window_stream, FeatureExtractor, SensorSample};
use crate::lof::{latest_model_file, DetectionRule, ModelSnapshot, ReferenceSet, RuleExtractor};
use crate::protocol::{
    AckPayload, AckStatus, AnomalyEventPayload, Envelope, ModelUpdatePayload, Payload, RawRecord, Topic,
};
use crate::Clock;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowOutcome {
    pub window_index: u64,
    pub features: Vec<f64>,
    pub score: f64,
    pub is_anomaly: bool,
    pub warmup: bool,
    pub model_version: u64,
    pub rule: Option<DetectionRule>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AgentStats {
    pub windows: u64,
    pub skipped_windows: u64,
    pub anomalies: u64,
    pub events_acked: u64,
    pub events_dropped: u64,
    pub rule_proposals: u64,
    pub updates_accepted: u64,
    pub updates_rejected: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpdateDecision {
    pub offered_version: u64,
    pub accepted: bool,
    pub active_version: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// The speed-layer pipeline for one piece of equipment.
///
/// Owns the model and the streak state; model updates arrive through the
/// link's queue and are applied between windows, so every window is scored
/// by exactly one snapshot.
pub struct EdgeAgent<L: CloudLink> {
    config: EdgeConfig,
    extractor: FeatureExtractor,
    model: Arc<ModelSnapshot>,
    spool: Spool,
    link: L,
    rules: RuleExtractor,
    pending: VecDeque<Envelope>,
    warmup_left: usize,
    raw_seq: u64,
    ack_seq: u64,
    clock: Clock,
    stats: AgentStats,
    updates: Vec<UpdateDecision>,
}

fn bootstrap_model(config: &EdgeConfig) -> Result<ModelSnapshot, EdgeError> {
    let reference = ReferenceSet::new(config.features.feature_dim(), config.capacity);
    Ok(ModelSnapshot::new(
        0,
        config.lof_params(),
        reference,
        config.default_threshold,
        None,
    )?)
}

/// Loads the newest of the configured initial model and any model
/// persisted in `model_dir`; without either, an empty version-0 model that
/// warmup fills.
pub fn load_model(config: &EdgeConfig) -> Result<ModelSnapshot, EdgeError> {
    let mut best = match &config.initial_model {
        Some(path) => Some(ModelSnapshot::load(path, config.capacity)?),
        None => None,
    };
    if let Some((version, path)) = latest_model_file(&config.model_dir).map_err(EdgeError::Spool)? {
        if best.as_ref().is_none_or(|m| m.version < version) {
            best = Some(ModelSnapshot::load(&path, config.capacity)?);
        }
    }
    let model = match best {
        Some(m) => m,
        None => bootstrap_model(config)?,
    };
    if model.dim() != config.features.feature_dim() {
        return Err(EdgeError::Config(format!(
            "model dimension {} does not match feature dimension {}",
            model.dim(),
            config.features.feature_dim()
        )));
    }
    Ok(model)
}

impl<L: CloudLink> EdgeAgent<L> {
    pub fn new(config: EdgeConfig, link: L, clock: Clock) -> Result<Self, EdgeError> {
        config.validate()?;
        let extractor = FeatureExtractor::new(config.features.clone())?;
        let model = load_model(&config)?;
        let spool = Spool::open(&config.spool_dir, &config.edge_id, config.segment_windows).map_err(EdgeError::Spool)?;
        // warmup applies to a fresh spool only; a resumed agent keeps scoring
        let warmup_left = if spool.last_window().is_none() {
            model.params.k + 1
        } else {
            0
        };
        info!(
            edge = %config.edge_id,
            model_version = model.version,
            reference = model.reference.len(),
            resume_after = ?spool.last_window(),
            "edge agent ready"
        );
        Ok(EdgeAgent {
            rules: RuleExtractor::new(config.rule_streak, config.rule_margin, config.eps),
            config,
            extractor,
            model: Arc::new(model),
            spool,
            link,
            pending: VecDeque::new(),
            warmup_left,
            raw_seq: 0,
            ack_seq: 0,
            clock,
            stats: AgentStats::default(),
            updates: Vec::new(),
        })
    }

    pub fn config(&self) -> &EdgeConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<ModelSnapshot> {
        &self.model
    }

    pub fn model_version(&self) -> u64 {
        self.model.version
    }

    pub fn stats(&self) -> &AgentStats {
        &self.stats
    }

    pub fn wire_stats(&self) -> &WireStats {
        self.link.stats()
    }

    pub fn spool(&self) -> &Spool {
        &self.spool
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    pub fn pending_events(&self) -> usize {
        self.pending.len()
    }

    pub fn update_decisions(&self) -> &[UpdateDecision] {
        &self.updates
    }

    /// Index of the last window already spooled; windows at or below it
    /// are skipped when a source is replayed after a restart.
    pub fn resume_after(&self) -> Option<u64> {
        self.spool.last_window()
    }

    /// Feeds a whole sample stream through the pipeline.
    pub fn run<I>(&mut self, samples: I) -> Result<Vec<WindowOutcome>, EdgeError>
    where
        I: IntoIterator<Item = SensorSample>,
    {
        let n = self.config.features.window_size;
        let hop = self.config.features.hop;
        let mut out = Vec::new();
        for (j, w) in window_stream(samples, n, hop)?.enumerate() {
            let w = w?;
            if let Some(o) = self.process_window(j as u64, &w.samples)? {
                out.push(o);
            }
        }
        self.flush_pending();
        Ok(out)
    }

    /// Processes one window. Returns `None` for a window already spooled
    /// before a restart.
    pub fn process_window(&mut self, window_index: u64, samples: &[f64]) -> Result<Option<WindowOutcome>, EdgeError> {
        if self.spool.last_window().is_some_and(|w| window_index <= w) {
            self.stats.skipped_windows += 1;
            return Ok(None);
        }
        self.poll_updates();

        let features = self.extractor.extract(samples)?.to_vec();
        let warmup = self.warmup_left > 0 || !self.model.can_score();
        let (score, is_anomaly) = if warmup {
            (1.0, false)
        } else {
            let s = self.model.score_window(&features)?;
            (s.score, s.is_anomaly)
        };
        let model_version = self.model.version;

        // a spool failure is fatal: the batch layer must see every window
        self.spool
            .append(&RawRecord {
                window_index,
                features: features.clone(),
                score,
            })
            .map_err(EdgeError::Spool)?;
        self.stats.windows += 1;

        if is_anomaly {
            self.stats.anomalies += 1;
            let event = AnomalyEventPayload {
                equipment_id: self.config.equipment_id.clone(),
                window_index,
                score,
                features: features.clone(),
                threshold_at_detection: self.model.threshold,
                model_version,
            };
            self.enqueue(Envelope::new(
                &self.config.edge_id,
                window_index + 1,
                (self.clock)(),
                Payload::Anomaly(event),
            ));
        }
        let rule = if warmup {
            None
        } else {
            self.rules.observe(&features, score, is_anomaly)
        };
        if let Some(r) = &rule {
            self.stats.rule_proposals += 1;
            debug!(rule_id = %r.rule_id, "rule extracted");
            self.enqueue(Envelope::new(
                &self.config.edge_id,
                window_index + 1,
                (self.clock)(),
                Payload::RuleProposal(r.to_proposal()),
            ));
        }
        if !self.pending.is_empty() {
            self.flush_pending();
        }

        if warmup {
            ModelSnapshot::admit_unconditionally(&mut self.model, &features);
            self.warmup_left = self.warmup_left.saturating_sub(1);
        } else {
            ModelSnapshot::maybe_admit(&mut self.model, &features, score);
        }

        if let Some(t) = self.config.batch_every_windows {
            if (window_index + 1).is_multiple_of(t) {
                self.upload_batch()?;
            }
        }
        Ok(Some(WindowOutcome {
            window_index,
            features,
            score,
            is_anomaly,
            warmup,
            model_version,
            rule,
        }))
    }

    fn enqueue(&mut self, env: Envelope) {
        if self.pending.len() >= self.config.max_pending {
            self.pending.pop_front();
            self.stats.events_dropped += 1;
        }
        self.pending.push_back(env);
    }

    /// Sends queued events in order; stops at the first failure and keeps
    /// the rest for the next attempt. Returns how many were ACKed.
    pub fn flush_pending(&mut self) -> usize {
        let mut sent = 0;
        while let Some(env) = self.pending.front() {
            match self.link.request(env) {
                Ok(ack) if ack.is_success() => {
                    self.pending.pop_front();
                    self.stats.events_acked += 1;
                    sent += 1;
                }
                Ok(ack) => {
                    debug!(detail = ?ack.detail, "cloud refused event; will retry");
                    break;
                }
                Err(e) => {
                    debug!(error = %e, queued = self.pending.len(), "cloud unreachable; will retry");
                    break;
                }
            }
        }
        sent
    }

    /// Applies every model update waiting on the link and ACKs each one.
    pub fn poll_updates(&mut self) {
        while let Some(env) = self.link.poll_update() {
            let Payload::ModelUpdate(update) = &env.payload else {
                continue;
            };
            let decision = self.apply_model_update(update);
            let status = if decision.accepted {
                AckStatus::Accepted
            } else {
                AckStatus::Rejected
            };
            self.ack_seq += 1;
            let ack = Envelope::new(
                &self.config.edge_id,
                self.ack_seq,
                (self.clock)(),
                Payload::Ack(AckPayload {
                    ack_topic: Topic::ModelUpdate,
                    ack_seq: env.seq,
                    status,
                    detail: decision.detail.clone(),
                    active_version: Some(decision.active_version),
                }),
            );
            if let Err(e) = self.link.send(&ack) {
                warn!(error = %e, "could not acknowledge model update");
            }
        }
    }

    /// Swaps in a pushed model if its version is newer and it is well
    /// formed; persists it as `model-v<version>` before the swap.
    pub fn apply_model_update(&mut self, update: &ModelUpdatePayload) -> UpdateDecision {
        let current = self.model.version;
        let result = if update.model_version <= current {
            Err(format!("stale version {} (active {current})", update.model_version))
        } else {
            ModelSnapshot::from_update(update, self.model.dim(), self.config.capacity)
                .map_err(|e| e.to_string())
                .and_then(|m| {
                    m.save(&self.config.model_dir)
                        .map_err(|e| format!("persist model: {e}"))?;
                    Ok(m)
                })
        };
        let decision = match result {
            Ok(m) => {
                info!(from = current, to = m.version, threshold = m.threshold, "model swapped");
                self.model = Arc::new(m);
                self.stats.updates_accepted += 1;
                UpdateDecision {
                    offered_version: update.model_version,
                    accepted: true,
                    active_version: self.model.version,
                    detail: None,
                }
            }
            Err(detail) => {
                warn!(offered = update.model_version, %detail, "model update rejected");
                self.stats.updates_rejected += 1;
                UpdateDecision {
                    offered_version: update.model_version,
                    accepted: false,
                    active_version: current,
                    detail: Some(detail),
                }
            }
        };
        self.updates.push(decision.clone());
        decision
    }

    /// Closes the open spool segment and uploads all closed segments.
    pub fn upload_batch(&mut self) -> Result<UploadReport, EdgeError> {
        self.spool.close_current().map_err(EdgeError::Spool)?;
        let clock = self.clock.clone();
        let dir = self.spool.dir().to_path_buf();
        upload_closed_segments(
            &mut self.link,
            &dir,
            &self.config.edge_id,
            &mut self.raw_seq,
            &*clock,
        )
    }

    /// Flushes what it can and closes the open spool segment.
    pub fn shutdown(mut self) -> Result<(AgentStats, L), EdgeError> {
        self.flush_pending();
        self.spool.close_current().map_err(EdgeError::Spool)?;
        Ok((self.stats, self.link))
    }
}
