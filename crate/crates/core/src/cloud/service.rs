//! The maintenance cloud: event ingest through the rule engine, alerts and
//! failure predictions, maintenance orders, rule merging, the raw store, and
//! model retraining and distribution.
//!
//! All mutable state sits behind one mutex, so every store has a single
//! writer at a time. Retraining copies the raw records out and runs without
//! the lock, so ingest continues while it computes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use super::batch::{retrain, RetrainError, RetrainParams, RetrainSummary};
use super::cep::{CepRule, MergeOutcome, RuleSet};
use super::orders::{ErpStub, MaintenanceOrder, OrderError, OrderStatus, OrderTransition, StatusChange};
use super::predict::{estimate_eta, CatalogEntry, FailurePrediction, FaultCatalog, PredictError};
use super::store::{read_lines, write_atomic, AppendLog};
use crate::canonical;
use crate::lof::ModelSnapshot;
use crate::protocol::{
    self, AckPayload, AckStatus, AnomalyEventPayload, Envelope, Payload, RawBatchChunkPayload, RawRecord,
    RuleProposalPayload, Topic,
};
use crate::{system_clock, Clock};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    pub store_dir: PathBuf,
    pub bind_host: String,
    pub tcp_port: u16,
    pub http_port: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog_path: Option<PathBuf>,
    /// Inline catalog, used when `catalog_path` is not set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Vec<CatalogEntry>>,
    pub retrain: RetrainParams,
    pub retrain_seed: u64,
    /// Cloud-authored CEP rules loaded at startup.
    pub rules: Vec<CepRule>,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            store_dir: PathBuf::from("cloud-store"),
            bind_host: "127.0.0.1".into(),
            tcp_port: 7700,
            http_port: 7780,
            catalog_path: None,
            catalog: None,
            retrain: RetrainParams::default(),
            retrain_seed: 7,
            rules: Vec::new(),
        }
    }
}

impl CloudConfig {
    pub fn load(path: &Path) -> Result<Self, CloudError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CloudError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_catalog(&self) -> Result<FaultCatalog, CloudError> {
        let entries: Vec<CatalogEntry> = match (&self.catalog_path, &self.catalog) {
            (Some(p), _) => {
                let text = fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| CloudError::Config(format!("{}: {e}", p.display())))?
            }
            (None, Some(entries)) => entries.clone(),
            (None, None) => return Err(CloudError::Config("no fault catalog configured".into())),
        };
        Ok(FaultCatalog::new(entries)?)
    }
}

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Retrain(#[from] RetrainError),
    #[error("no model built for edge `{0}`")]
    NoModel(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Critical,
    Warning,
}

/// A persisted anomaly event plus what the cloud made of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub edge_id: String,
    pub seq: u64,
    pub event: AnomalyEventPayload,
    pub received_at_ms: u64,
    pub matched_rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertView {
    pub alert_id: String,
    pub edge_id: String,
    pub equipment_id: String,
    pub window_index: u64,
    pub score: f64,
    pub threshold: f64,
    pub severity: Severity,
    pub received_at_ms: u64,
    pub matched_rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_id: Option<String>,
}

impl AlertView {
    fn from_record(r: &EventRecord) -> Option<AlertView> {
        Some(AlertView {
            alert_id: r.alert_id.clone()?,
            edge_id: r.edge_id.clone(),
            equipment_id: r.event.equipment_id.clone(),
            window_index: r.event.window_index,
            score: r.event.score,
            threshold: r.event.threshold_at_detection,
            severity: r.severity?,
            received_at_ms: r.received_at_ms,
            matched_rules: r.matched_rules.clone(),
            prediction_id: r.prediction_id.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DistributionStatus {
    Pending { version: u64 },
    Sent { version: u64, seq: u64 },
    Accepted { version: u64 },
    Rejected { version: u64, active_version: Option<u64>, detail: Option<String> },
}

impl DistributionStatus {
    pub fn version(&self) -> u64 {
        match self {
            DistributionStatus::Pending { version }
            | DistributionStatus::Sent { version, .. }
            | DistributionStatus::Accepted { version }
            | DistributionStatus::Rejected { version, .. } => *version,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    pub edge_id: String,
    pub equipment_id: Option<String>,
    pub known_version: u64,
    pub built_version: Option<u64>,
    pub connected: bool,
    pub raw_records: usize,
    pub distribution: Option<DistributionStatus>,
}

/// Cloud→edge delivery channel for model pushes (a TCP connection or an
/// in-process queue).
pub trait EdgeSink: Send + Sync {
    fn push(&self, env: &Envelope) -> Result<(), String>;
}

/// Per-connection protocol state.
pub struct Session {
    sink: Option<Arc<dyn EdgeSink>>,
    registered: HashSet<String>,
    last_seq: HashMap<(String, Topic), u64>,
    ack_seq: u64,
}

impl Session {
    pub fn new(sink: Option<Arc<dyn EdgeSink>>) -> Self {
        Session {
            sink,
            registered: HashSet::new(),
            last_seq: HashMap::new(),
            ack_seq: 0,
        }
    }

    /// Edges that have sent at least one message on this session.
    pub fn edges(&self) -> impl Iterator<Item = &str> {
        self.registered.iter().map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RuleLogEntry {
    Upsert(CepRule),
    Remove(String),
}

struct Staging {
    total: u32,
    next: u32,
    records: Vec<RawRecord>,
}

#[derive(Default)]
struct EdgeState {
    equipment_id: Option<String>,
    known_version: u64,
    built: Option<Arc<ModelSnapshot>>,
    distribution: Option<DistributionStatus>,
    sink: Option<Arc<dyn EdgeSink>>,
    push_seq: u64,
}

struct CloudState {
    events: Vec<EventRecord>,
    event_keys: HashSet<(String, u64)>,
    event_log: AppendLog<EventRecord>,
    rules: RuleSet,
    rule_log: AppendLog<RuleLogEntry>,
    predictions: Vec<FailurePrediction>,
    prediction_log: AppendLog<FailurePrediction>,
    orders: Vec<MaintenanceOrder>,
    order_log: AppendLog<MaintenanceOrder>,
    erp: ErpStub,
    raw: BTreeMap<String, Vec<RawRecord>>,
    raw_segments: HashSet<(String, String)>,
    staging: HashMap<(String, String), Staging>,
    edges: BTreeMap<String, EdgeState>,
    alert_count: usize,
}

pub struct CloudService {
    state: Mutex<CloudState>,
    catalog: FaultCatalog,
    config: CloudConfig,
    clock: Clock,
    storage_fault: AtomicBool,
}

fn raw_dir(store: &Path) -> PathBuf {
    store.join("raw")
}

fn model_dir(store: &Path, edge_id: &str) -> PathBuf {
    store.join("models").join(edge_id)
}

impl CloudService {
    pub fn open(config: CloudConfig) -> Result<Self, CloudError> {
        Self::open_with_clock(config, system_clock())
    }

    /// Opens the store directory, replaying every log into memory.
    pub fn open_with_clock(config: CloudConfig, clock: Clock) -> Result<Self, CloudError> {
        let catalog = config.load_catalog()?;
        let dir = config.store_dir.clone();
        fs::create_dir_all(&dir)?;

        let (event_log, events) = AppendLog::<EventRecord>::open(dir.join("events.log"))?;
        let event_keys = events.iter().map(|e| (e.edge_id.clone(), e.seq)).collect();
        let alert_count = events.iter().filter(|e| e.alert_id.is_some()).count();

        let (mut rule_log, rule_entries) = AppendLog::<RuleLogEntry>::open(dir.join("rules.log"))?;
        let mut rules: Vec<CepRule> = Vec::new();
        for entry in rule_entries {
            match entry {
                RuleLogEntry::Upsert(r) => match rules.iter_mut().find(|x| x.rule_id == r.rule_id) {
                    Some(x) => *x = r,
                    None => rules.push(r),
                },
                RuleLogEntry::Remove(id) => rules.retain(|x| x.rule_id != id),
            }
        }
        let mut rules = RuleSet::from_rules(rules);
        for r in &config.rules {
            if rules.get(&r.rule_id).is_none() {
                rules
                    .add_cloud_rule(r.clone())
                    .map_err(CloudError::Config)?;
                rule_log.append(&RuleLogEntry::Upsert(rules.get(&r.rule_id).unwrap().clone()))?;
            }
        }

        let (prediction_log, predictions) = AppendLog::<FailurePrediction>::open(dir.join("predictions.log"))?;
        let (order_log, order_entries) = AppendLog::<MaintenanceOrder>::open(dir.join("orders.log"))?;
        let mut orders: Vec<MaintenanceOrder> = Vec::new();
        for o in order_entries {
            match orders.iter_mut().find(|x| x.order_id == o.order_id) {
                Some(x) => *x = o,
                None => orders.push(o),
            }
        }
        let erp = ErpStub::open(&dir)?;

        let mut raw: BTreeMap<String, Vec<RawRecord>> = BTreeMap::new();
        let mut raw_segments = HashSet::new();
        let rd = raw_dir(&dir);
        if rd.exists() {
            let mut edge_dirs: Vec<_> = fs::read_dir(&rd)?.collect::<Result<_, _>>()?;
            edge_dirs.sort_by_key(|e| e.file_name());
            for edge_entry in edge_dirs {
                let edge_id = edge_entry.file_name().to_string_lossy().into_owned();
                let mut segs: Vec<_> = fs::read_dir(edge_entry.path())?.collect::<Result<_, _>>()?;
                segs.sort_by_key(|e| e.file_name());
                for seg in segs {
                    let name = seg.file_name().to_string_lossy().into_owned();
                    let Some(segment_id) = name.strip_suffix(".seg") else {
                        continue;
                    };
                    let recs: Vec<RawRecord> = read_lines(&seg.path())?;
                    raw.entry(edge_id.clone()).or_default().extend(recs);
                    raw_segments.insert((edge_id.clone(), segment_id.to_string()));
                }
            }
        }

        let mut edges: BTreeMap<String, EdgeState> = BTreeMap::new();
        for e in &events {
            let st = edges.entry(e.edge_id.clone()).or_default();
            st.equipment_id = Some(e.event.equipment_id.clone());
            st.known_version = st.known_version.max(e.event.model_version);
        }
        let models = dir.join("models");
        if models.exists() {
            for entry in fs::read_dir(&models)? {
                let entry = entry?;
                let edge_id = entry.file_name().to_string_lossy().into_owned();
                if let Some((_, path)) = crate::lof::latest_model_file(&entry.path())? {
                    match ModelSnapshot::load(&path, config.retrain.capacity) {
                        Ok(m) => edges.entry(edge_id).or_default().built = Some(Arc::new(m)),
                        Err(e) => warn!(path = %path.display(), error = %e, "skipping unreadable model"),
                    }
                }
            }
        }
        info!(
            events = events.len(),
            rules = rules.len(),
            orders = orders.len(),
            "cloud store opened at {}",
            dir.display()
        );

        Ok(CloudService {
            state: Mutex::new(CloudState {
                events,
                event_keys,
                event_log,
                rules,
                rule_log,
                predictions,
                prediction_log,
                orders,
                order_log,
                erp,
                raw,
                raw_segments,
                staging: HashMap::new(),
                edges,
                alert_count,
            }),
            catalog,
            config,
            clock,
            storage_fault: AtomicBool::new(false),
        })
    }

    fn lock(&self) -> MutexGuard<'_, CloudState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn now(&self) -> u64 {
        (self.clock)()
    }

    pub fn config(&self) -> &CloudConfig {
        &self.config
    }

    pub fn catalog(&self) -> &FaultCatalog {
        &self.catalog
    }

    /// Makes subsequent event writes fail, as a full disk would.
    pub fn set_storage_fault(&self, failing: bool) {
        self.storage_fault.store(failing, Ordering::SeqCst);
    }

    // ---------------------------------------------------------------- wire

    /// Decodes a line, handles it, and returns the encoded ACK line (if the
    /// message warrants one).
    pub fn handle_line(&self, line: &[u8], session: &mut Session) -> Option<Vec<u8>> {
        match protocol::decode(line) {
            Ok(env) => {
                let ack = self.handle(env, session)?;
                match protocol::encode_framed(&ack) {
                    Ok(bytes) => Some(bytes),
                    Err(e) => {
                        warn!(error = %e, "failed to encode ack");
                        None
                    }
                }
            }
            Err(e) => {
                warn!(error = %e, "dropping undecodable line");
                None
            }
        }
    }

    pub fn handle(&self, env: Envelope, session: &mut Session) -> Option<Envelope> {
        let key = (env.edge_id.clone(), env.topic);
        if let Some(prev) = session.last_seq.get(&key) {
            if env.seq <= *prev {
                warn!(edge = %env.edge_id, topic = %env.topic, seq = env.seq, prev, "sequence regression");
            }
        }
        session.last_seq.insert(key, env.seq);
        if let Some(sink) = session.sink.clone() {
            if session.registered.insert(env.edge_id.clone()) {
                self.register_edge(&env.edge_id, sink);
            }
        }

        let edge_id = env.edge_id.clone();
        let ack = match env.payload {
            Payload::Anomaly(p) => match self.ingest_event(&edge_id, env.seq, p) {
                Ok(_) => AckPayload::ok(Topic::Anomaly, env.seq),
                Err(e) => AckPayload::error(Topic::Anomaly, env.seq, e.to_string()),
            },
            Payload::RuleProposal(p) => match self.merge_rule(&p) {
                Ok(outcome) => AckPayload {
                    detail: Some(format!("{outcome:?}")),
                    ..AckPayload::ok(Topic::RuleProposal, env.seq)
                },
                Err(e) => AckPayload::error(Topic::RuleProposal, env.seq, e.to_string()),
            },
            Payload::RawBatch(p) => match self.ingest_raw_chunk(&edge_id, &p) {
                Ok(detail) => AckPayload {
                    detail: Some(detail.to_string()),
                    ..AckPayload::ok(Topic::RawBatch, env.seq)
                },
                Err(e) => AckPayload::error(Topic::RawBatch, env.seq, e.to_string()),
            },
            Payload::ModelUpdate(_) => {
                AckPayload::error(Topic::ModelUpdate, env.seq, "model updates flow cloud to edge only")
            }
            Payload::Ack(a) => {
                self.record_ack(&edge_id, &a);
                return None;
            }
        };
        session.ack_seq += 1;
        Some(Envelope::new(edge_id, session.ack_seq, self.now(), Payload::Ack(ack)))
    }

    /// Attaches a delivery sink for an edge and flushes any pending push.
    pub fn register_edge(&self, edge_id: &str, sink: Arc<dyn EdgeSink>) {
        let mut st = self.lock();
        let edge = st.edges.entry(edge_id.to_string()).or_default();
        edge.sink = Some(sink);
        if let Some(DistributionStatus::Pending { .. }) = edge.distribution {
            Self::push_locked(edge_id, edge, self.now());
        }
    }

    pub fn unregister_edge(&self, edge_id: &str, sink: &Arc<dyn EdgeSink>) {
        let mut st = self.lock();
        if let Some(edge) = st.edges.get_mut(edge_id) {
            if edge.sink.as_ref().is_some_and(|s| Arc::ptr_eq(s, sink)) {
                edge.sink = None;
            }
        }
    }

    fn record_ack(&self, edge_id: &str, ack: &AckPayload) {
        if ack.ack_topic != Topic::ModelUpdate {
            debug!(edge = edge_id, topic = %ack.ack_topic, "ignoring ack");
            return;
        }
        let mut st = self.lock();
        let edge = st.edges.entry(edge_id.to_string()).or_default();
        if let Some(v) = ack.active_version {
            edge.known_version = edge.known_version.max(v);
        }
        let version = match &edge.distribution {
            Some(DistributionStatus::Sent { version, seq }) if *seq == ack.ack_seq => *version,
            _ => {
                debug!(edge = edge_id, seq = ack.ack_seq, "ack for an unknown push");
                return;
            }
        };
        edge.distribution = Some(match ack.status {
            AckStatus::Accepted | AckStatus::Ok => DistributionStatus::Accepted { version },
            _ => DistributionStatus::Rejected {
                version,
                active_version: ack.active_version,
                detail: ack.detail.clone(),
            },
        });
        info!(edge = edge_id, status = ?edge.distribution, "model push acknowledged");
    }

    // -------------------------------------------------------------- events

    /// Persists an anomaly event, evaluates the rule set, and raises an alert
    /// (with a failure prediction) when a rule matches or the score exceeds
    /// twice the edge threshold. Replays of an `(edge_id, seq)` pair return
    /// the stored record unchanged.
    pub fn ingest_event(&self, edge_id: &str, seq: u64, event: AnomalyEventPayload) -> Result<EventRecord, CloudError> {
        let now = self.now();
        let mut guard = self.lock();
        let st = &mut *guard;
        let key = (edge_id.to_string(), seq);
        if st.event_keys.contains(&key) {
            let existing = st.events.iter().rev().find(|e| e.edge_id == edge_id && e.seq == seq);
            return Ok(existing.cloned().expect("indexed event exists"));
        }
        if self.storage_fault.load(Ordering::SeqCst) {
            return Err(CloudError::Storage("event store unavailable".into()));
        }
        let matched = st.rules.evaluate(&event.equipment_id, &event.features, event.score);
        let critical = 2.0 * event.threshold_at_detection;
        let alert = !matched.is_empty() || event.score > critical;
        let mut record = EventRecord {
            edge_id: edge_id.to_string(),
            seq,
            received_at_ms: now,
            matched_rules: matched,
            alert_id: None,
            severity: None,
            prediction_id: None,
            event,
        };
        let mut prediction = None;
        if alert {
            let alert_id = format!("alert-{:06}", st.alert_count + 1);
            record.alert_id = Some(alert_id.clone());
            record.severity = Some(if record.event.score >= critical {
                Severity::Critical
            } else {
                Severity::Warning
            });
            st.events.push(record.clone());
            let p = Self::predict_locked(st, &self.catalog, &record.event.equipment_id, now);
            st.events.pop();
            let p = p?;
            record.prediction_id = Some(p.prediction_id.clone());
            prediction = Some(p);
        }
        st.event_log
            .append(&record)
            .map_err(|e| CloudError::Storage(e.to_string()))?;
        if let Some(p) = prediction {
            st.prediction_log.append(&p)?;
            st.predictions.push(p);
        }
        if alert {
            st.alert_count += 1;
        }
        st.event_keys.insert(key);
        st.events.push(record.clone());
        let edge = st.edges.entry(edge_id.to_string()).or_default();
        edge.equipment_id = Some(record.event.equipment_id.clone());
        edge.known_version = edge.known_version.max(record.event.model_version);
        Ok(record)
    }

    fn predict_locked(
        st: &CloudState,
        catalog: &FaultCatalog,
        equipment_id: &str,
        now: u64,
    ) -> Result<FailurePrediction, CloudError> {
        let history: Vec<&EventRecord> = st
            .events
            .iter()
            .filter(|e| e.event.equipment_id == equipment_id)
            .collect();
        let latest_alert = history
            .iter()
            .rev()
            .find(|e| e.alert_id.is_some())
            .ok_or_else(|| PredictError::NoData(equipment_id.to_string()))?;
        let (entry, confidence) = catalog.classify(&latest_alert.event.features);
        let critical = 2.0 * latest_alert.event.threshold_at_detection;
        let trend: Vec<(u64, f64)> = history.iter().map(|e| (e.event.window_index, e.event.score)).collect();
        Ok(FailurePrediction {
            prediction_id: format!("pred-{:06}", st.predictions.len() + 1),
            equipment_id: equipment_id.to_string(),
            cause: entry.cause.clone(),
            part: entry.part.clone(),
            action: entry.action,
            confidence,
            eta_windows: estimate_eta(&trend, critical),
            latest_score: latest_alert.event.score,
            score_critical: critical,
            alert_id: latest_alert.alert_id.clone().unwrap(),
            created_at_ms: now,
        })
    }

    /// Fresh prediction from the current event history (not stored).
    pub fn predict_failure(&self, equipment_id: &str) -> Result<FailurePrediction, CloudError> {
        let st = self.lock();
        Self::predict_locked(&st, &self.catalog, equipment_id, self.now())
    }

    pub fn events(&self) -> Vec<EventRecord> {
        self.lock().events.clone()
    }

    pub fn event_count(&self) -> usize {
        self.lock().events.len()
    }

    /// Alerts, newest first.
    pub fn alerts(&self, limit: usize, offset: usize) -> (Vec<AlertView>, usize) {
        let st = self.lock();
        let all: Vec<AlertView> = st.events.iter().rev().filter_map(AlertView::from_record).collect();
        let total = all.len();
        (all.into_iter().skip(offset).take(limit).collect(), total)
    }

    pub fn alert(&self, alert_id: &str) -> Option<AlertView> {
        let st = self.lock();
        st.events
            .iter()
            .find(|e| e.alert_id.as_deref() == Some(alert_id))
            .and_then(AlertView::from_record)
    }

    pub fn prediction(&self, prediction_id: &str) -> Option<FailurePrediction> {
        self.lock()
            .predictions
            .iter()
            .find(|p| p.prediction_id == prediction_id)
            .cloned()
    }

    /// Most recent stored prediction for a piece of equipment.
    pub fn latest_prediction(&self, equipment_id: &str) -> Option<FailurePrediction> {
        self.lock()
            .predictions
            .iter()
            .rev()
            .find(|p| p.equipment_id == equipment_id)
            .cloned()
    }

    pub fn predictions(&self) -> Vec<FailurePrediction> {
        self.lock().predictions.clone()
    }

    // --------------------------------------------------------------- rules

    pub fn merge_rule(&self, proposal: &RuleProposalPayload) -> Result<MergeOutcome, CloudError> {
        let mut guard = self.lock();
        let st = &mut *guard;
        let outcome = st.rules.merge(proposal);
        let survivor = st.rules.get(outcome.rule_id()).cloned().expect("merged rule exists");
        st.rule_log.append(&RuleLogEntry::Upsert(survivor))?;
        if let MergeOutcome::Widened { absorbed, .. } = &outcome {
            for id in absorbed {
                st.rule_log.append(&RuleLogEntry::Remove(id.clone()))?;
            }
        }
        info!(?outcome, "rule proposal merged");
        Ok(outcome)
    }

    pub fn rules(&self) -> Vec<CepRule> {
        self.lock().rules.rules().to_vec()
    }

    /// Rule ids matching the given features, evaluated purely cloud-side.
    pub fn evaluate_rules(&self, equipment_id: &str, features: &[f64], score: f64) -> Vec<String> {
        self.lock().rules.evaluate(equipment_id, features, score)
    }

    // -------------------------------------------------------------- orders

    pub fn create_order(&self, prediction_id: &str) -> Result<MaintenanceOrder, CloudError> {
        let now = self.now();
        let mut guard = self.lock();
        let st = &mut *guard;
        let p = st
            .predictions
            .iter()
            .find(|p| p.prediction_id == prediction_id)
            .cloned()
            .ok_or_else(|| OrderError::UnknownPrediction(prediction_id.to_string()))?;
        if let Some(o) = st
            .orders
            .iter()
            .find(|o| o.prediction_id == prediction_id && o.status != OrderStatus::Rejected)
        {
            return Err(OrderError::AlreadyOpen {
                prediction_id: prediction_id.to_string(),
                order_id: o.order_id.clone(),
            }
            .into());
        }
        let order = MaintenanceOrder {
            order_id: format!("ord-{:06}", st.orders.len() + 1),
            equipment_id: p.equipment_id.clone(),
            part: p.part.clone(),
            action: p.action,
            cause: p.cause.clone(),
            status: OrderStatus::Proposed,
            prediction_id: p.prediction_id.clone(),
            erp_receipt: None,
            history: vec![StatusChange {
                status: OrderStatus::Proposed,
                at_ms: now,
            }],
        };
        st.order_log.append(&order)?;
        st.orders.push(order.clone());
        Ok(order)
    }

    fn transition_locked(
        st: &mut CloudState,
        order_id: &str,
        t: OrderTransition,
        now: u64,
    ) -> Result<MaintenanceOrder, CloudError> {
        let idx = st
            .orders
            .iter()
            .position(|o| o.order_id == order_id)
            .ok_or_else(|| OrderError::NotFound(order_id.to_string()))?;
        let mut next = st.orders[idx].clone();
        next.transition(t, now)?;
        st.order_log.append(&next)?;
        st.orders[idx] = next.clone();
        Ok(next)
    }

    fn submit_locked(st: &mut CloudState, order_id: &str, now: u64) -> Result<MaintenanceOrder, CloudError> {
        let order = st
            .orders
            .iter()
            .find(|o| o.order_id == order_id)
            .cloned()
            .ok_or_else(|| OrderError::NotFound(order_id.to_string()))?;
        let receipt = st.erp.submit(&order, now)?;
        let idx = st.orders.iter().position(|o| o.order_id == order_id).unwrap();
        let mut next = order;
        next.transition(OrderTransition::Submit, now)?;
        next.erp_receipt = Some(receipt);
        st.order_log.append(&next)?;
        st.orders[idx] = next.clone();
        Ok(next)
    }

    /// PROPOSED → APPROVED, then submission to the ERP stub (→ SUBMITTED).
    /// If the ERP is unreachable the order stays APPROVED and is retried by
    /// [`CloudService::retry_erp_submissions`].
    pub fn approve_order(&self, order_id: &str) -> Result<MaintenanceOrder, CloudError> {
        let now = self.now();
        let mut st = self.lock();
        let approved = Self::transition_locked(&mut st, order_id, OrderTransition::Approve, now)?;
        match Self::submit_locked(&mut st, order_id, now) {
            Ok(submitted) => Ok(submitted),
            Err(CloudError::Order(OrderError::Erp(e))) => {
                warn!(order = order_id, error = %e, "erp submission failed; order stays approved");
                Ok(approved)
            }
            Err(e) => Err(e),
        }
    }

    pub fn reject_order(&self, order_id: &str) -> Result<MaintenanceOrder, CloudError> {
        let now = self.now();
        let mut st = self.lock();
        Self::transition_locked(&mut st, order_id, OrderTransition::Reject, now)
    }

    /// Re-sends every APPROVED order to the ERP. Returns how many went through.
    pub fn retry_erp_submissions(&self) -> usize {
        let now = self.now();
        let mut st = self.lock();
        let pending: Vec<String> = st
            .orders
            .iter()
            .filter(|o| o.status == OrderStatus::Approved)
            .map(|o| o.order_id.clone())
            .collect();
        pending
            .iter()
            .filter(|id| Self::submit_locked(&mut st, id, now).is_ok())
            .count()
    }

    pub fn set_erp_available(&self, up: bool) {
        self.lock().erp.set_available(up);
    }

    pub fn erp_log_path(&self) -> PathBuf {
        self.lock().erp.path().to_path_buf()
    }

    pub fn order(&self, order_id: &str) -> Option<MaintenanceOrder> {
        self.lock().orders.iter().find(|o| o.order_id == order_id).cloned()
    }

    pub fn orders(&self) -> Vec<MaintenanceOrder> {
        self.lock().orders.clone()
    }

    // ----------------------------------------------------------- raw store

    /// Accepts one RAW_BATCH chunk. Chunks of a segment must arrive in order;
    /// the segment is written once its final chunk lands. A segment already
    /// stored is acknowledged without being stored again.
    pub fn ingest_raw_chunk(&self, edge_id: &str, chunk: &RawBatchChunkPayload) -> Result<&'static str, CloudError> {
        let mut guard = self.lock();
        let st = &mut *guard;
        let key = (edge_id.to_string(), chunk.segment_id.clone());
        if st.raw_segments.contains(&key) {
            st.staging.remove(&key);
            return Ok("duplicate");
        }
        if chunk.chunk_index == 0 {
            st.staging.insert(
                key.clone(),
                Staging {
                    total: chunk.total_chunks,
                    next: 0,
                    records: Vec::new(),
                },
            );
        }
        let staging = match st.staging.get_mut(&key) {
            Some(s) if s.total == chunk.total_chunks && s.next == chunk.chunk_index => s,
            _ => {
                st.staging.remove(&key);
                return Err(CloudError::Storage(format!(
                    "chunk {} of segment {} out of order; resend from chunk 0",
                    chunk.chunk_index, chunk.segment_id
                )));
            }
        };
        staging.records.extend(chunk.records.iter().cloned());
        staging.next += 1;
        if staging.next < staging.total {
            return Ok("partial");
        }
        let staged = st.staging.remove(&key).unwrap();
        let mut text = String::new();
        for r in &staged.records {
            text.push_str(&canonical::to_framed_line(r).map_err(|e| CloudError::Storage(e.to_string()))?);
        }
        let path = raw_dir(&self.config.store_dir)
            .join(edge_id)
            .join(format!("{}.seg", chunk.segment_id));
        write_atomic(&path, text.as_bytes())?;
        st.raw.entry(edge_id.to_string()).or_default().extend(staged.records);
        st.raw_segments.insert(key);
        Ok("stored")
    }

    pub fn raw_records(&self, edge_id: &str) -> Vec<RawRecord> {
        self.lock().raw.get(edge_id).cloned().unwrap_or_default()
    }

    pub fn raw_segment_ids(&self, edge_id: &str) -> Vec<String> {
        let st = self.lock();
        let mut ids: Vec<String> = st
            .raw_segments
            .iter()
            .filter(|(e, _)| e == edge_id)
            .map(|(_, s)| s.clone())
            .collect();
        ids.sort();
        ids
    }

    // ------------------------------------------------------ models & edges

    /// Records the model an edge was provisioned with, so retraining picks
    /// the next version number.
    pub fn note_edge_model(&self, edge_id: &str, version: u64) {
        let mut st = self.lock();
        let edge = st.edges.entry(edge_id.to_string()).or_default();
        edge.known_version = edge.known_version.max(version);
    }

    /// Retrains an edge's model from all its stored raw records. The records
    /// are copied out first; the computation runs without holding the lock.
    pub fn retrain_edge(&self, edge_id: &str) -> Result<RetrainSummary, CloudError> {
        let (features, previous) = {
            let st = self.lock();
            let recs = st.raw.get(edge_id).ok_or_else(|| CloudError::NotFound(format!("raw data for {edge_id}")))?;
            let features: Vec<Vec<f64>> = recs.iter().map(|r| r.features.clone()).collect();
            let edge = st.edges.get(edge_id);
            let previous = edge
                .map(|e| e.known_version.max(e.built.as_ref().map(|b| b.version).unwrap_or(0)))
                .unwrap_or(0);
            (features, previous)
        };
        let (snapshot, summary) = retrain(&features, previous, &self.config.retrain, self.config.retrain_seed)?;
        snapshot.save(&model_dir(&self.config.store_dir, edge_id))?;
        info!(edge = edge_id, ?summary, "retrained");
        let mut st = self.lock();
        st.edges.entry(edge_id.to_string()).or_default().built = Some(Arc::new(snapshot));
        Ok(summary)
    }

    pub fn built_model(&self, edge_id: &str) -> Option<Arc<ModelSnapshot>> {
        self.lock().edges.get(edge_id).and_then(|e| e.built.clone())
    }

    fn push_locked(edge_id: &str, edge: &mut EdgeState, now: u64) -> DistributionStatus {
        let Some(model) = edge.built.clone() else {
            unreachable!("push without a built model");
        };
        let version = model.version;
        let status = match &edge.sink {
            Some(sink) => {
                edge.push_seq += 1;
                let env = Envelope::new(edge_id, edge.push_seq, now, Payload::ModelUpdate(model.to_update()));
                match sink.push(&env) {
                    Ok(()) => DistributionStatus::Sent {
                        version,
                        seq: edge.push_seq,
                    },
                    Err(e) => {
                        warn!(edge = edge_id, error = %e, "push failed; edge marked pending");
                        edge.sink = None;
                        DistributionStatus::Pending { version }
                    }
                }
            }
            None => DistributionStatus::Pending { version },
        };
        edge.distribution = Some(status.clone());
        status
    }

    /// Pushes the latest built model to the edge, or marks it pending until
    /// the edge reconnects.
    pub fn distribute_model(&self, edge_id: &str) -> Result<DistributionStatus, CloudError> {
        let now = self.now();
        let mut st = self.lock();
        let edge = st
            .edges
            .get_mut(edge_id)
            .filter(|e| e.built.is_some())
            .ok_or_else(|| CloudError::NoModel(edge_id.to_string()))?;
        Ok(Self::push_locked(edge_id, edge, now))
    }

    /// Pushes an arbitrary snapshot (used to exercise edge version checks).
    pub fn push_snapshot(&self, edge_id: &str, snapshot: ModelSnapshot) -> Result<DistributionStatus, CloudError> {
        let now = self.now();
        let mut st = self.lock();
        let edge = st.edges.entry(edge_id.to_string()).or_default();
        let previous = edge.built.replace(Arc::new(snapshot));
        let status = Self::push_locked(edge_id, edge, now);
        if let Some(prev) = previous {
            if prev.version > status.version() {
                edge.built = Some(prev);
            }
        }
        Ok(status)
    }

    pub fn distribution_status(&self, edge_id: &str) -> Option<DistributionStatus> {
        self.lock().edges.get(edge_id).and_then(|e| e.distribution.clone())
    }

    pub fn edges(&self) -> Vec<EdgeSummary> {
        let st = self.lock();
        st.edges
            .iter()
            .map(|(id, e)| EdgeSummary {
                edge_id: id.clone(),
                equipment_id: e.equipment_id.clone(),
                known_version: e.known_version,
                built_version: e.built.as_ref().map(|b| b.version),
                connected: e.sink.is_some(),
                raw_records: st.raw.get(id).map(Vec::len).unwrap_or(0),
                distribution: e.distribution.clone(),
            })
            .collect()
    }
}
