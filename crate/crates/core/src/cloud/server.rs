//! TCP listener for the line protocol.

use std::io::{self, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use tracing::{debug, info, warn};

use super::service::{CloudService, EdgeSink, Session};
use crate::protocol::{self, Envelope, LineReader};

/// Write half of an edge connection, shared between the connection's
/// reader thread (ACKs) and the service (model pushes).
struct TcpSink {
    stream: Mutex<TcpStream>,
}

impl EdgeSink for TcpSink {
    fn push(&self, env: &Envelope) -> Result<(), String> {
        let bytes = protocol::encode_framed(env).map_err(|e| e.to_string())?;
        let mut s = self.stream.lock().unwrap_or_else(|p| p.into_inner());
        s.write_all(&bytes).map_err(|e| e.to_string())
    }
}

impl TcpSink {
    fn write(&self, bytes: &[u8]) -> io::Result<()> {
        self.stream.lock().unwrap_or_else(|p| p.into_inner()).write_all(bytes)
    }
}

pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl TcpServer {
    /// Binds and starts accepting. Port 0 picks a free port; see
    /// [`TcpServer::local_addr`].
    pub fn start(service: Arc<CloudService>, addr: impl ToSocketAddrs) -> io::Result<TcpServer> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let accept = {
            let stop = stop.clone();
            let conns = conns.clone();
            thread::Builder::new()
                .name("cloud-accept".into())
                .spawn(move || accept_loop(listener, service, stop, conns))?
        };
        info!(%addr, "line protocol listening");
        Ok(TcpServer {
            addr,
            stop,
            conns,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and closes every open connection.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        for c in self.conns.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    service: Arc<CloudService>,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!(error = %e, "accept failed");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        match stream.try_clone() {
            Ok(c) => conns.lock().unwrap_or_else(|p| p.into_inner()).push(c),
            Err(e) => warn!(error = %e, "cannot track connection"),
        }
        let service = service.clone();
        let spawned = thread::Builder::new()
            .name("cloud-conn".into())
            .spawn(move || {
                if let Err(e) = serve_connection(service, stream) {
                    debug!(error = %e, "connection ended");
                }
            });
        if let Err(e) = spawned {
            warn!(error = %e, "cannot spawn connection thread");
        }
    }
}

fn serve_connection(service: Arc<CloudService>, stream: TcpStream) -> io::Result<()> {
    let peer = stream.peer_addr().ok();
    let sink = Arc::new(TcpSink {
        stream: Mutex::new(stream.try_clone()?),
    });
    let dyn_sink: Arc<dyn EdgeSink> = sink.clone();
    let mut session = Session::new(Some(dyn_sink.clone()));
    let mut reader = LineReader::new(BufReader::new(stream));
    let result = loop {
        let line = match reader.next_line() {
            Ok(Some(l)) => l.to_vec(),
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        };
        if let Some(ack) = service.handle_line(&line, &mut session) {
            if let Err(e) = sink.write(&ack) {
                break Err(e);
            }
        }
    };
    for e in session.edges() {
        service.unregister_edge(e, &dyn_sink);
    }
    debug!(?peer, "connection closed");
    result
}
