//! In-process transport: the edge talks to a [`CloudService`] through the
//! same encoded lines it would put on a socket, without the socket.

use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};

use super::service::{CloudService, EdgeSink, Session};
use crate::edge::link::{CloudLink, LinkError, WireStats};
use crate::protocol::{self, AckPayload, Envelope, Payload};

/// Delivers pushes into a channel drained by the edge.
pub struct ChannelSink {
    tx: Mutex<Sender<Envelope>>,
}

impl ChannelSink {
    pub fn new(tx: Sender<Envelope>) -> Self {
        ChannelSink { tx: Mutex::new(tx) }
    }
}

impl EdgeSink for ChannelSink {
    fn push(&self, env: &Envelope) -> Result<(), String> {
        // the push crosses the same codec as a socket would
        let line = protocol::encode_framed(env).map_err(|e| e.to_string())?;
        let env = protocol::decode(&line).map_err(|e| e.to_string())?;
        self.tx
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .send(env)
            .map_err(|_| "edge receiver gone".to_string())
    }
}

pub struct InProcLink {
    cloud: Arc<CloudService>,
    session: Option<Session>,
    sink: Option<Arc<dyn EdgeSink>>,
    updates: Option<Receiver<Envelope>>,
    stats: WireStats,
}

impl InProcLink {
    pub fn new(cloud: Arc<CloudService>) -> Self {
        let mut link = InProcLink {
            cloud,
            session: None,
            sink: None,
            updates: None,
            stats: WireStats::default(),
        };
        link.reconnect();
        link
    }

    /// Simulates losing the connection: requests fail and the cloud sees
    /// the edge as disconnected.
    pub fn disconnect(&mut self) {
        if let (Some(session), Some(sink)) = (self.session.take(), self.sink.take()) {
            for e in session.edges() {
                self.cloud.unregister_edge(e, &sink);
            }
        }
        self.updates = None;
    }

    /// A fresh session, as after a TCP reconnect.
    pub fn reconnect(&mut self) {
        self.disconnect();
        let (tx, rx) = mpsc::channel();
        let sink: Arc<dyn EdgeSink> = Arc::new(ChannelSink::new(tx));
        self.session = Some(Session::new(Some(sink.clone())));
        self.sink = Some(sink);
        self.updates = Some(rx);
    }

    pub fn is_connected(&self) -> bool {
        self.session.is_some()
    }

    fn deliver(&mut self, env: &Envelope) -> Result<Option<Vec<u8>>, LinkError> {
        let session = self
            .session
            .as_mut()
            .ok_or_else(|| LinkError::Offline("in-process link disconnected".into()))?;
        let line = protocol::encode_framed(env).map_err(|e| LinkError::Protocol(e.to_string()))?;
        self.stats.record(env.topic, line.len());
        Ok(self.cloud.handle_line(&line, session))
    }
}

impl CloudLink for InProcLink {
    fn request(&mut self, env: &Envelope) -> Result<AckPayload, LinkError> {
        let reply = self.deliver(env)?.ok_or(LinkError::Timeout)?;
        match protocol::decode(&reply) {
            Ok(Envelope {
                payload: Payload::Ack(a), ..
            }) => Ok(a),
            Ok(other) => Err(LinkError::Protocol(format!("expected ACK, got {}", other.topic))),
            Err(e) => Err(LinkError::Protocol(e.to_string())),
        }
    }

    fn send(&mut self, env: &Envelope) -> Result<(), LinkError> {
        self.deliver(env).map(|_| ())
    }

    fn poll_update(&mut self) -> Option<Envelope> {
        self.updates.as_ref()?.try_recv().ok()
    }

    fn stats(&self) -> &WireStats {
        &self.stats
    }
}
