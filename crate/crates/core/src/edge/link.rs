//! Edge-side transport to the cloud.

use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::protocol::{self, AckPayload, Envelope, LineReader, Payload, Topic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("cloud unreachable: {0}")]
    Offline(String),
    #[error("timed out waiting for ack")]
    Timeout,
    #[error("protocol: {0}")]
    Protocol(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TopicStats {
    pub messages: u64,
    pub bytes: u64,
}

/// Bytes and messages written to the transport, per topic. A message counts
/// once it has been handed to the stream, whether or not it is ACKed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WireStats {
    pub topics: BTreeMap<Topic, TopicStats>,
}

impl WireStats {
    pub fn record(&mut self, topic: Topic, bytes: usize) {
        let t = self.topics.entry(topic).or_default();
        t.messages += 1;
        t.bytes += bytes as u64;
    }

    pub fn get(&self, topic: Topic) -> TopicStats {
        self.topics.get(&topic).copied().unwrap_or_default()
    }

    /// ANOMALY plus RULE_PROPOSAL bytes: the speed-layer traffic.
    pub fn speed_bytes(&self) -> u64 {
        self.get(Topic::Anomaly).bytes + self.get(Topic::RuleProposal).bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.topics.values().map(|t| t.bytes).sum()
    }
}

pub trait CloudLink: Send {
    /// Sends an envelope and waits for the cloud's ACK of it.
    fn request(&mut self, env: &Envelope) -> Result<AckPayload, LinkError>;

    /// Sends an envelope that expects no reply (the edge's ACK of a push).
    fn send(&mut self, env: &Envelope) -> Result<(), LinkError>;

    /// Next pushed MODEL_UPDATE, if one is waiting.
    fn poll_update(&mut self) -> Option<Envelope>;

    fn stats(&self) -> &WireStats;
}

struct Connection {
    stream: TcpStream,
    acks: Receiver<AckPayload>,
}

/// Line protocol over TCP. Connects lazily and reconnects with exponential
/// backoff; while backing off, calls fail fast with [`LinkError::Offline`]
/// so the pipeline never blocks on a dead cloud.
pub struct TcpLink {
    addr: String,
    timeout: Duration,
    conn: Option<Connection>,
    updates_tx: Sender<Envelope>,
    updates: Receiver<Envelope>,
    backoff: Duration,
    retry_at: Option<Instant>,
    stats: WireStats,
}

const BACKOFF_MIN: Duration = Duration::from_millis(100);
const BACKOFF_MAX: Duration = Duration::from_secs(5);

impl TcpLink {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        let (updates_tx, updates) = mpsc::channel();
        TcpLink {
            addr: addr.into(),
            timeout,
            conn: None,
            updates_tx,
            updates,
            backoff: BACKOFF_MIN,
            retry_at: None,
            stats: WireStats::default(),
        }
    }

    pub fn is_connected(&self) -> bool {
        self.conn.is_some()
    }

    fn connect(&mut self) -> Result<&mut Connection, LinkError> {
        if self.conn.is_none() {
            if let Some(at) = self.retry_at {
                if Instant::now() < at {
                    return Err(LinkError::Offline(format!("backing off from {}", self.addr)));
                }
            }
            match self.open() {
                Ok(c) => {
                    info!(addr = %self.addr, "connected to cloud");
                    self.conn = Some(c);
                    self.backoff = BACKOFF_MIN;
                    self.retry_at = None;
                }
                Err(e) => {
                    self.retry_at = Some(Instant::now() + self.backoff);
                    self.backoff = (self.backoff * 2).min(BACKOFF_MAX);
                    return Err(e);
                }
            }
        }
        Ok(self.conn.as_mut().expect("connected"))
    }

    fn open(&self) -> Result<Connection, LinkError> {
        let offline = |e: std::io::Error| LinkError::Offline(format!("{}: {e}", self.addr));
        let addr = self
            .addr
            .to_socket_addrs()
            .map_err(offline)?
            .next()
            .ok_or_else(|| LinkError::Offline(format!("{} does not resolve", self.addr)))?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(offline)?;
        let _ = stream.set_nodelay(true);
        let read_half = stream.try_clone().map_err(offline)?;
        let (ack_tx, acks) = mpsc::channel();
        let updates = self.updates_tx.clone();
        thread::Builder::new()
            .name("edge-link-reader".into())
            .spawn(move || read_loop(read_half, ack_tx, updates))
            .map_err(offline)?;
        Ok(Connection { stream, acks })
    }

    fn write(&mut self, env: &Envelope) -> Result<(), LinkError> {
        let bytes = protocol::encode_framed(env).map_err(|e| LinkError::Protocol(e.to_string()))?;
        let conn = self.connect()?;
        if let Err(e) = conn.stream.write_all(&bytes) {
            self.drop_connection();
            return Err(LinkError::Offline(e.to_string()));
        }
        self.stats.record(env.topic, bytes.len());
        Ok(())
    }

    fn drop_connection(&mut self) {
        if let Some(c) = self.conn.take() {
            let _ = c.stream.shutdown(std::net::Shutdown::Both);
            warn!(addr = %self.addr, "connection dropped");
        }
    }
}

fn read_loop(stream: TcpStream, acks: Sender<AckPayload>, updates: Sender<Envelope>) {
    for item in LineReader::new(BufReader::new(stream)) {
        match item {
            Ok(Envelope {
                payload: Payload::Ack(a), ..
            }) => {
                if acks.send(a).is_err() {
                    break;
                }
            }
            Ok(env @ Envelope {
                payload: Payload::ModelUpdate(_),
                ..
            }) => {
                let _ = updates.send(env);
            }
            Ok(other) => debug!(topic = %other.topic, "ignoring unexpected message from cloud"),
            Err(protocol::ReadError::Io(e)) => {
                debug!(error = %e, "link reader stopped");
                break;
            }
            Err(e) => warn!(error = %e, "undecodable line from cloud"),
        }
    }
}

impl CloudLink for TcpLink {
    fn request(&mut self, env: &Envelope) -> Result<AckPayload, LinkError> {
        self.write(env)?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let conn = self.conn.as_mut().ok_or(LinkError::Timeout)?;
            let left = deadline.saturating_duration_since(Instant::now());
            match conn.acks.recv_timeout(left) {
                Ok(ack) if ack.ack_topic == env.topic && ack.ack_seq == env.seq => return Ok(ack),
                Ok(stale) => debug!(?stale, "skipping stale ack"),
                Err(RecvTimeoutError::Timeout) => {
                    self.drop_connection();
                    return Err(LinkError::Timeout);
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.drop_connection();
                    return Err(LinkError::Offline("connection closed".into()));
                }
            }
        }
    }

    fn send(&mut self, env: &Envelope) -> Result<(), LinkError> {
        self.write(env)
    }

    fn poll_update(&mut self) -> Option<Envelope> {
        self.updates.try_recv().ok()
    }

    fn stats(&self) -> &WireStats {
        &self.stats
    }
}
