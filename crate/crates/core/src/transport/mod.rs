//! How an initiating client reaches its peers: the wire format, a
//! deterministic in-process network and a TCP network.

pub mod codec;
mod sim;
mod tcp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{decode, encode, Body, CodecError, Header, Message, MessageKind, PROTOCOL_VERSION};
pub use sim::{FaultConfig, Fate, SimLink, SimTransport, TraceEvent};
pub use tcp::{PeerServer, PeerSnapshot, SharedSnapshot, TcpTransport, DEFAULT_TIMEOUT};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer {peer} unreachable: {reason}")]
    Unreachable { peer: usize, reason: String },
    #[error("peer {peer} refused the connection: protocol version mismatch")]
    VersionMismatch { peer: usize },
    #[error("protocol error talking to peer {peer}: {reason}")]
    Protocol { peer: usize, reason: String },
    #[error("unknown peer {0}")]
    UnknownPeer(usize),
}

impl TransportError {
    pub fn peer(&self) -> usize {
        match self {
            TransportError::Unreachable { peer, .. }
            | TransportError::VersionMismatch { peer }
            | TransportError::Protocol { peer, .. }
            | TransportError::UnknownPeer(peer) => *peer,
        }
    }

    pub fn is_unreachable(&self) -> bool {
        matches!(self, TransportError::Unreachable { .. })
    }
}

/// A peer's model as received over the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerWeights {
    pub sample_count: u32,
    pub params: Vec<f64>,
}

/// Request/response access from one client to the others.
pub trait Transport {
    /// The peer's own version counter.
    fn ping(&mut self, from: usize, to: usize) -> Result<u64, TransportError>;

    /// The peer's current weights and training-sample count.
    fn fetch_weights(&mut self, from: usize, to: usize) -> Result<PeerWeights, TransportError>;

    /// Cumulative bytes of all frames sent and received by this handle.
    fn bytes_transferred(&self) -> u64;
}

/// Read-only view of the peers a simulated network delivers requests to.
pub trait PeerDirectory {
    fn peer_count(&self) -> usize;
    fn own_version(&self, peer: usize) -> Option<u64>;
    fn weights(&self, peer: usize) -> Option<(u32, &[f64])>;
}

/// Entry of a TCP peer table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerAddress {
    pub client_index: usize,
    pub endpoint: String,
}
