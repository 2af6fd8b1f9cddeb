//! Blocking TCP transport: a peer server answering pings and weight requests
//! from a shared snapshot, and a client issuing one request per connection.

use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::codec::{
    decode, decode_body, encode, read_frame, Body, Message, DEFAULT_MAX_FRAME, ERR_BAD_REQUEST, ERR_VERSION_MISMATCH,
    LENGTH_PREFIX, PROTOCOL_VERSION,
};
use super::{PeerAddress, PeerWeights, Transport, TransportError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// What a peer serves. Replaced wholesale under the write lock, so a reader
/// always sees a version, count and weights from the same instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerSnapshot {
    pub own_version: u64,
    pub sample_count: u32,
    pub params: Arc<Vec<f64>>,
}

pub type SharedSnapshot = Arc<RwLock<PeerSnapshot>>;

pub struct PeerServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl PeerServer {
    pub fn spawn(bind: impl ToSocketAddrs, client_index: usize, state: SharedSnapshot) -> io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = thread::Builder::new()
            .name(format!("peer-server-{client_index}"))
            .spawn(move || accept_loop(listener, client_index, state, flag))?;
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for PeerServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn accept_loop(listener: TcpListener, client_index: usize, state: SharedSnapshot, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let state = Arc::clone(&state);
                let spawned = thread::Builder::new()
                    .name(format!("peer-conn-{client_index}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, client_index, &state) {
                            debug!("connection from {peer} ended: {e}");
                        }
                    });
                if let Err(e) = spawned {
                    warn!("cannot spawn connection handler: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn serve_connection(mut stream: TcpStream, client_index: usize, state: &SharedSnapshot) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(60)))?;
    let me = client_index as u16;
    loop {
        let frame = match read_frame(&mut stream, DEFAULT_MAX_FRAME) {
            Ok(frame) => frame,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        let request = match decode_body(&frame[LENGTH_PREFIX..]) {
            Ok(msg) => msg,
            Err(e) => {
                let reply = Message::new(me, 0, Body::Error { code: ERR_BAD_REQUEST, text: e.to_string() });
                stream.write_all(&encode(&reply))?;
                return Ok(());
            }
        };
        let id = request.header.request_id;
        if request.header.protocol_version != PROTOCOL_VERSION {
            let text = format!(
                "protocol version {} not supported, expected {PROTOCOL_VERSION}",
                request.header.protocol_version
            );
            let reply = Message::new(me, id, Body::Error { code: ERR_VERSION_MISMATCH, text });
            stream.write_all(&encode(&reply))?;
            return Ok(());
        }
        let body = match request.body {
            Body::PingRequest => Body::PingResponse {
                own_version: read_snapshot(state).own_version,
            },
            Body::WeightsRequest => {
                let snap = read_snapshot(state);
                Body::WeightsResponse {
                    sample_count: snap.sample_count,
                    params: snap.params.as_ref().clone(),
                }
            }
            _ => Body::Error {
                code: ERR_BAD_REQUEST,
                text: "not a request".into(),
            },
        };
        stream.write_all(&encode(&Message::new(me, id, body)))?;
    }
}

fn read_snapshot(state: &SharedSnapshot) -> PeerSnapshot {
    state.read().unwrap_or_else(|poisoned| poisoned.into_inner()).clone()
}

/// Client side. Safe to move between threads; each request opens its own
/// connection.
#[derive(Debug)]
pub struct TcpTransport {
    self_index: usize,
    peers: HashMap<usize, String>,
    timeout: Duration,
    protocol_version: u8,
    max_frame: usize,
    next_request_id: u64,
    bytes: u64,
}

impl TcpTransport {
    pub fn new(self_index: usize, peer_table: &[PeerAddress]) -> Self {
        Self {
            self_index,
            peers: peer_table
                .iter()
                .map(|p| (p.client_index, p.endpoint.clone()))
                .collect(),
            timeout: DEFAULT_TIMEOUT,
            protocol_version: PROTOCOL_VERSION,
            max_frame: DEFAULT_MAX_FRAME,
            next_request_id: 0,
            bytes: 0,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Speaks a different protocol version; only useful to exercise the
    /// mismatch path.
    pub fn with_protocol_version(mut self, version: u8) -> Self {
        self.protocol_version = version;
        self
    }

    fn exchange(&mut self, to: usize, body: Body) -> Result<Body, TransportError> {
        let endpoint = self.peers.get(&to).ok_or(TransportError::UnknownPeer(to))?;
        let unreachable = |reason: String| TransportError::Unreachable { peer: to, reason };
        let addr = endpoint
            .to_socket_addrs()
            .map_err(|e| unreachable(format!("cannot resolve {endpoint}: {e}")))?
            .next()
            .ok_or_else(|| unreachable(format!("{endpoint} resolves to nothing")))?;

        let request_id = self.next_request_id;
        self.next_request_id += 1;
        let mut request = Message::new(self.self_index as u16, request_id, body);
        request.header.protocol_version = self.protocol_version;
        let frame = encode(&request);

        let mut stream =
            TcpStream::connect_timeout(&addr, self.timeout).map_err(|e| unreachable(format!("connect: {e}")))?;
        let io_setup = stream
            .set_read_timeout(Some(self.timeout))
            .and_then(|_| stream.set_write_timeout(Some(self.timeout)))
            .and_then(|_| stream.set_nodelay(true));
        io_setup.map_err(|e| unreachable(e.to_string()))?;
        stream.write_all(&frame).map_err(|e| unreachable(format!("send: {e}")))?;
        self.bytes += frame.len() as u64;

        let reply = read_frame(&mut stream, self.max_frame).map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData => TransportError::Protocol {
                peer: to,
                reason: e.to_string(),
            },
            _ => unreachable(format!("receive: {e}")),
        })?;
        self.bytes += reply.len() as u64;
        let reply = decode(&reply).map_err(|e| TransportError::Protocol {
            peer: to,
            reason: e.to_string(),
        })?;
        if let Body::Error { code: ERR_VERSION_MISMATCH, .. } = reply.body {
            return Err(TransportError::VersionMismatch { peer: to });
        }
        if reply.header.protocol_version != self.protocol_version {
            return Err(TransportError::VersionMismatch { peer: to });
        }
        if reply.header.request_id != request_id {
            return Err(TransportError::Protocol {
                peer: to,
                reason: format!("response to request {} while waiting for {request_id}", reply.header.request_id),
            });
        }
        Ok(reply.body)
    }
}

fn unexpected(peer: usize, body: Body) -> TransportError {
    let reason = match body {
        Body::Error { code, text } => format!("error {code}: {text}"),
        other => format!("unexpected {:?}", other.kind()),
    };
    TransportError::Protocol { peer, reason }
}

impl Transport for TcpTransport {
    fn ping(&mut self, _from: usize, to: usize) -> Result<u64, TransportError> {
        match self.exchange(to, Body::PingRequest)? {
            Body::PingResponse { own_version } => Ok(own_version),
            other => Err(unexpected(to, other)),
        }
    }

    fn fetch_weights(&mut self, _from: usize, to: usize) -> Result<PeerWeights, TransportError> {
        match self.exchange(to, Body::WeightsRequest)? {
            Body::WeightsResponse { sample_count, params } => Ok(PeerWeights { sample_count, params }),
            other => Err(unexpected(to, other)),
        }
    }

    fn bytes_transferred(&self) -> u64 {
        self.bytes
    }
}
