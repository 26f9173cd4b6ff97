//! Edge/cloud message envelopes and the newline-delimited line codec.
//!
//! Wire format: one UTF-8 JSON object per line, keys sorted, terminated by
//! `\n`:
//!
//! ```text
//! {"edge_id":"e1","payload":{...},"seq":7,"timestamp_ms":1700000000000,"topic":"ANOMALY","version":1}
//! ```
//!
//! The codec is pure; framing helpers ([`LineReader`], [`write_envelope`])
//! work over any reliable ordered byte stream.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported topic `{0}`")]
    UnsupportedTopic(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u32),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("payload variant {payload} does not match topic {topic}")]
    TopicMismatch { topic: Topic, payload: Topic },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Topic {
    Anomaly,
    RuleProposal,
    RawBatch,
    ModelUpdate,
    Ack,
}

impl Topic {
    pub const ALL: [Topic; 5] = [
        Topic::Anomaly,
        Topic::RuleProposal,
        Topic::RawBatch,
        Topic::ModelUpdate,
        Topic::Ack,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::Anomaly => "ANOMALY",
            Topic::RuleProposal => "RULE_PROPOSAL",
            Topic::RawBatch => "RAW_BATCH",
            Topic::ModelUpdate => "MODEL_UPDATE",
            Topic::Ack => "ACK",
        }
    }

    fn parse(s: &str) -> Option<Topic> {
        Topic::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Speed-layer anomaly report for one scored window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEventPayload {
    pub equipment_id: String,
    pub window_index: u64,
    pub score: f64,
    pub features: Vec<f64>,
    pub threshold_at_detection: f64,
    pub model_version: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleProposalPayload {
    pub rule_id: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub min_score: f64,
    pub support_count: u64,
}

/// One spooled window: the unit of the batch layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub window_index: u64,
    pub features: Vec<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawBatchChunkPayload {
    pub chunk_index: u32,
    pub total_chunks: u32,
    pub records: Vec<RawRecord>,
    pub segment_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdatePayload {
    pub model_version: u64,
    pub k: usize,
    pub threshold: f64,
    pub reference_points: Vec<Vec<f64>>,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AckStatus {
    Ok,
    Error,
    Accepted,
    Rejected,
}

/// Acknowledgement for any topic. Model-update ACKs carry accept/reject and
/// the receiver's active model version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AckPayload {
    pub ack_topic: Topic,
    pub ack_seq: u64,
    pub status: AckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_version: Option<u64>,
}

impl AckPayload {
    pub fn ok(topic: Topic, seq: u64) -> Self {
        AckPayload {
            ack_topic: topic,
            ack_seq: seq,
            status: AckStatus::Ok,
            detail: None,
            active_version: None,
        }
    }

    pub fn error(topic: Topic, seq: u64, detail: impl Into<String>) -> Self {
        AckPayload {
            status: AckStatus::Error,
            detail: Some(detail.into()),
            ..AckPayload::ok(topic, seq)
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self.status, AckStatus::Ok | AckStatus::Accepted)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Anomaly(AnomalyEventPayload),
    RuleProposal(RuleProposalPayload),
    RawBatch(RawBatchChunkPayload),
    ModelUpdate(ModelUpdatePayload),
    Ack(AckPayload),
}

impl Payload {
    pub fn topic(&self) -> Topic {
        match self {
            Payload::Anomaly(_) => Topic::Anomaly,
            Payload::RuleProposal(_) => Topic::RuleProposal,
            Payload::RawBatch(_) => Topic::RawBatch,
            Payload::ModelUpdate(_) => Topic::ModelUpdate,
            Payload::Ack(_) => Topic::Ack,
        }
    }

    fn to_value(&self) -> Result<Value, serde_json::Error> {
        match self {
            Payload::Anomaly(p) => serde_json::to_value(p),
            Payload::RuleProposal(p) => serde_json::to_value(p),
            Payload::RawBatch(p) => serde_json::to_value(p),
            Payload::ModelUpdate(p) => serde_json::to_value(p),
            Payload::Ack(p) => serde_json::to_value(p),
        }
    }

    fn from_value(topic: Topic, v: Value) -> Result<Payload, serde_json::Error> {
        Ok(match topic {
            Topic::Anomaly => Payload::Anomaly(serde_json::from_value(v)?),
            Topic::RuleProposal => Payload::RuleProposal(serde_json::from_value(v)?),
            Topic::RawBatch => Payload::RawBatch(serde_json::from_value(v)?),
            Topic::ModelUpdate => Payload::ModelUpdate(serde_json::from_value(v)?),
            Topic::Ack => Payload::Ack(serde_json::from_value(v)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub topic: Topic,
    pub version: u32,
    pub edge_id: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub payload: Payload,
}

impl Envelope {
    /// Builds an envelope whose topic is taken from the payload variant.
    pub fn new(edge_id: impl Into<String>, seq: u64, timestamp_ms: u64, payload: Payload) -> Self {
        Envelope {
            topic: payload.topic(),
            version: PROTOCOL_VERSION,
            edge_id: edge_id.into(),
            seq,
            timestamp_ms,
            payload,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.payload.topic() != self.topic {
            return Err(ProtocolError::TopicMismatch {
                topic: self.topic,
                payload: self.payload.topic(),
            });
        }
        if self.version != PROTOCOL_VERSION {
            return Err(ProtocolError::UnsupportedVersion(self.version));
        }
        if self.edge_id.is_empty() {
            return invalid("edge_id is empty");
        }
        match &self.payload {
            Payload::Anomaly(p) => validate_anomaly(p),
            Payload::RuleProposal(p) => validate_rule(p),
            Payload::RawBatch(p) => validate_raw(p),
            Payload::ModelUpdate(p) => validate_model(p),
            Payload::Ack(_) => Ok(()),
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ProtocolError> {
    Err(ProtocolError::Validation(msg.into()))
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn validate_anomaly(p: &AnomalyEventPayload) -> Result<(), ProtocolError> {
    if p.equipment_id.is_empty() {
        return invalid("equipment_id is empty");
    }
    if !(p.score.is_finite() && p.score >= 0.0) {
        return invalid(format!("score must be finite and >= 0, got {}", p.score));
    }
    if p.features.is_empty() || !all_finite(&p.features) {
        return invalid("features must be a non-empty vector of finite reals");
    }
    if !(p.threshold_at_detection.is_finite() && p.threshold_at_detection > 0.0) {
        return invalid("threshold_at_detection must be positive");
    }
    Ok(())
}

fn validate_rule(p: &RuleProposalPayload) -> Result<(), ProtocolError> {
    if p.rule_id.is_empty() {
        return invalid("rule_id is empty");
    }
    if p.lower.is_empty() || p.lower.len() != p.upper.len() {
        return invalid("lower/upper must be non-empty and the same length");
    }
    if !all_finite(&p.lower) || !all_finite(&p.upper) || !p.min_score.is_finite() {
        return invalid("rule bounds must be finite");
    }
    if let Some(i) = (0..p.lower.len()).find(|&i| p.lower[i] > p.upper[i]) {
        return invalid(format!(
            "lower[{i}]={} exceeds upper[{i}]={}",
            p.lower[i], p.upper[i]
        ));
    }
    if p.support_count < 1 {
        return invalid("support_count must be >= 1");
    }
    Ok(())
}

fn validate_raw(p: &RawBatchChunkPayload) -> Result<(), ProtocolError> {
    if p.segment_id.is_empty() {
        return invalid("segment_id is empty");
    }
    if p.total_chunks < 1 || p.chunk_index >= p.total_chunks {
        return invalid(format!(
            "chunk_index {} out of range for total_chunks {}",
            p.chunk_index, p.total_chunks
        ));
    }
    for r in &p.records {
        if !all_finite(&r.features) || !r.score.is_finite() {
            return invalid(format!("record {} has non-finite values", r.window_index));
        }
    }
    Ok(())
}

fn validate_model(p: &ModelUpdatePayload) -> Result<(), ProtocolError> {
    if p.k < 1 {
        return invalid("k must be >= 1");
    }
    if !(p.threshold.is_finite() && p.threshold > 0.0) {
        return invalid("threshold must be positive");
    }
    if !(p.eps.is_finite() && p.eps > 0.0) {
        return invalid("eps must be positive");
    }
    let Some(first) = p.reference_points.first() else {
        return invalid("reference_points is empty");
    };
    let dim = first.len();
    if dim == 0 {
        return invalid("reference points have dimension 0");
    }
    for pt in &p.reference_points {
        if pt.len() != dim {
            return invalid("reference points differ in dimension");
        }
        if !all_finite(pt) {
            return invalid("reference point has non-finite coordinates");
        }
    }
    Ok(())
}

/// Encodes an envelope as one canonical line, without the `\n` terminator.
pub fn encode(env: &Envelope) -> Result<String, ProtocolError> {
    env.validate()?;
    let payload = env
        .payload
        .to_value()
        .map_err(|e| ProtocolError::Validation(e.to_string()))?;
    let mut obj = serde_json::Map::new();
    obj.insert("edge_id".into(), Value::from(env.edge_id.clone()));
    obj.insert("payload".into(), payload);
    obj.insert("seq".into(), Value::from(env.seq));
    obj.insert("timestamp_ms".into(), Value::from(env.timestamp_ms));
    obj.insert("topic".into(), Value::from(env.topic.as_str()));
    obj.insert("version".into(), Value::from(env.version));
    serde_json::to_string(&Value::Object(obj)).map_err(|e| ProtocolError::Parse(e.to_string()))
}

/// Encodes with the trailing `\n`; the returned length is what goes on the wire.
pub fn encode_framed(env: &Envelope) -> Result<Vec<u8>, ProtocolError> {
    let mut line = encode(env)?.into_bytes();
    line.push(b'\n');
    Ok(line)
}

#[derive(Deserialize)]
struct RawEnvelope {
    topic: String,
    version: u32,
    edge_id: String,
    seq: u64,
    timestamp_ms: u64,
    payload: Value,
}

/// Decodes one line (an optional trailing `\n` / `\r\n` is accepted).
/// Unknown fields anywhere in the message are ignored.
pub fn decode(line: &[u8]) -> Result<Envelope, ProtocolError> {
    let line = line
        .strip_suffix(b"\n")
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
        .unwrap_or(line);
    if line.is_empty() {
        return Err(ProtocolError::Parse("empty line".into()));
    }
    if line.contains(&b'\n') {
        return Err(ProtocolError::Parse("embedded newline".into()));
    }
    let raw: RawEnvelope =
        serde_json::from_slice(line).map_err(|e| ProtocolError::Parse(e.to_string()))?;
    let topic =
        Topic::parse(&raw.topic).ok_or_else(|| ProtocolError::UnsupportedTopic(raw.topic.clone()))?;
    if raw.version != PROTOCOL_VERSION {
        return Err(ProtocolError::UnsupportedVersion(raw.version));
    }
    let payload =
        Payload::from_value(topic, raw.payload).map_err(|e| ProtocolError::Parse(e.to_string()))?;
    let env = Envelope {
        topic,
        version: raw.version,
        edge_id: raw.edge_id,
        seq: raw.seq,
        timestamp_ms: raw.timestamp_ms,
        payload,
    };
    env.validate()?;
    Ok(env)
}

/// Writes one framed envelope and returns the number of bytes written.
pub fn write_envelope<W: Write>(w: &mut W, env: &Envelope) -> io::Result<usize> {
    let bytes = encode_framed(env).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}

/// Splits a byte stream into lines and decodes each one. Lines are
/// reassembled across arbitrary read boundaries by `BufRead::read_until`.
pub struct LineReader<R> {
    inner: R,
    buf: Vec<u8>,
    bytes_read: u64,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(inner: R) -> Self {
        LineReader {
            inner,
            buf: Vec::with_capacity(1024),
            bytes_read: 0,
        }
    }

    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }

    /// Next raw line including its terminator, or `None` at end of stream.
    /// A final unterminated fragment is returned as-is.
    pub fn next_line(&mut self) -> io::Result<Option<&[u8]>> {
        self.buf.clear();
        let n = self.inner.read_until(b'\n', &mut self.buf)?;
        if n == 0 {
            return Ok(None);
        }
        self.bytes_read += n as u64;
        Ok(Some(&self.buf))
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl<R: BufRead> Iterator for LineReader<R> {
    type Item = Result<Envelope, ReadError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_line() {
            Ok(None) => None,
            Ok(Some(line)) => Some(decode(line).map_err(ReadError::from)),
            Err(e) => Some(Err(e.into())),
        }
    }
}
