//! Single-threaded simulated network.
//!
//! Requests are delivered synchronously, so per-pair FIFO order is trivial.
//! Every frame really is encoded and decoded, and every attempt lands in the
//! trace, so the full trace is a pure function of the seed and the call
//! sequence.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::codec::{decode, encode, Body, Message, MessageKind};
use super::{PeerDirectory, PeerWeights, Transport, TransportError};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultConfig {
    pub unreachable: BTreeSet<usize>,
    /// Independent loss probability for every frame, requests and responses alike.
    pub drop_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Delivered,
    Dropped,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub from: usize,
    pub to: usize,
    pub request_id: u64,
    pub kind: MessageKind,
    pub bytes: usize,
    pub fate: Fate,
}

#[derive(Debug)]
pub struct SimTransport {
    n_clients: usize,
    rng: ChaCha8Rng,
    faults: FaultConfig,
    next_request_id: u64,
    trace: Vec<TraceEvent>,
    bytes: u64,
}

impl SimTransport {
    pub fn new(n_clients: usize, seed: u64) -> Self {
        Self {
            n_clients,
            rng: ChaCha8Rng::seed_from_u64(seed),
            faults: FaultConfig::default(),
            next_request_id: 0,
            trace: Vec::new(),
            bytes: 0,
        }
    }

    pub fn with_faults(mut self, faults: FaultConfig) -> Self {
        self.faults = faults;
        self
    }

    pub fn faults_mut(&mut self) -> &mut FaultConfig {
        &mut self.faults
    }

    pub fn set_unreachable(&mut self, peer: usize, unreachable: bool) {
        if unreachable {
            self.faults.unreachable.insert(peer);
        } else {
            self.faults.unreachable.remove(&peer);
        }
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn bytes_transferred(&self) -> u64 {
        self.bytes
    }

    /// Binds the network to the current peer states for a batch of requests.
    pub fn link<'a, D: PeerDirectory + ?Sized>(&'a mut self, peers: &'a D) -> SimLink<'a, D> {
        SimLink { net: self, peers }
    }

    fn lost(&mut self) -> bool {
        self.faults.drop_probability > 0.0 && self.rng.random::<f64>() < self.faults.drop_probability
    }

    fn record(&mut self, from: usize, to: usize, msg: &Message, bytes: usize, fate: Fate) {
        if fate == Fate::Delivered {
            self.bytes += bytes as u64;
        }
        self.trace.push(TraceEvent {
            from,
            to,
            request_id: msg.header.request_id,
            kind: msg.body.kind(),
            bytes,
            fate,
        });
    }
}

pub struct SimLink<'a, D: PeerDirectory + ?Sized> {
    net: &'a mut SimTransport,
    peers: &'a D,
}

impl<D: PeerDirectory + ?Sized> SimLink<'_, D> {
    fn exchange(&mut self, from: usize, to: usize, body: Body) -> Result<Body, TransportError> {
        if to >= self.net.n_clients || to >= self.peers.peer_count() {
            return Err(TransportError::UnknownPeer(to));
        }
        let request_id = self.net.next_request_id;
        self.net.next_request_id += 1;
        let request = Message::new(from as u16, request_id, body);
        let frame = encode(&request);

        if self.net.faults.unreachable.contains(&to) {
            self.net.record(from, to, &request, frame.len(), Fate::Unreachable);
            return Err(TransportError::Unreachable {
                peer: to,
                reason: "peer marked unreachable".into(),
            });
        }
        if self.net.lost() {
            self.net.record(from, to, &request, frame.len(), Fate::Dropped);
            return Err(TransportError::Unreachable {
                peer: to,
                reason: "request lost".into(),
            });
        }
        self.net.record(from, to, &request, frame.len(), Fate::Delivered);

        let received = decode(&frame).map_err(|e| TransportError::Protocol {
            peer: to,
            reason: e.to_string(),
        })?;
        let reply_body = self.serve(to, &received.body);
        let reply = Message::new(to as u16, received.header.request_id, reply_body);
        let reply_frame = encode(&reply);
        if self.net.lost() {
            self.net.record(to, from, &reply, reply_frame.len(), Fate::Dropped);
            return Err(TransportError::Unreachable {
                peer: to,
                reason: "response lost".into(),
            });
        }
        self.net.record(to, from, &reply, reply_frame.len(), Fate::Delivered);

        let reply = decode(&reply_frame).map_err(|e| TransportError::Protocol {
            peer: to,
            reason: e.to_string(),
        })?;
        if reply.header.request_id != request_id {
            return Err(TransportError::Protocol {
                peer: to,
                reason: "response request_id does not match".into(),
            });
        }
        Ok(reply.body)
    }

    fn serve(&self, peer: usize, request: &Body) -> Body {
        let unavailable = || Body::Error {
            code: super::codec::ERR_BAD_REQUEST,
            text: format!("peer {peer} has no state"),
        };
        match request {
            Body::PingRequest => match self.peers.own_version(peer) {
                Some(own_version) => Body::PingResponse { own_version },
                None => unavailable(),
            },
            Body::WeightsRequest => match self.peers.weights(peer) {
                Some((sample_count, params)) => Body::WeightsResponse {
                    sample_count,
                    params: params.to_vec(),
                },
                None => unavailable(),
            },
            _ => Body::Error {
                code: super::codec::ERR_BAD_REQUEST,
                text: "not a request".into(),
            },
        }
    }
}

fn unexpected(peer: usize, body: Body) -> TransportError {
    match body {
        Body::Error { code, text } => TransportError::Protocol {
            peer,
            reason: format!("error {code}: {text}"),
        },
        other => TransportError::Protocol {
            peer,
            reason: format!("unexpected {:?}", other.kind()),
        },
    }
}

impl<D: PeerDirectory + ?Sized> Transport for SimLink<'_, D> {
    fn ping(&mut self, from: usize, to: usize) -> Result<u64, TransportError> {
        match self.exchange(from, to, Body::PingRequest)? {
            Body::PingResponse { own_version } => Ok(own_version),
            other => Err(unexpected(to, other)),
        }
    }

    fn fetch_weights(&mut self, from: usize, to: usize) -> Result<PeerWeights, TransportError> {
        match self.exchange(from, to, Body::WeightsRequest)? {
            Body::WeightsResponse { sample_count, params } => Ok(PeerWeights { sample_count, params }),
            other => Err(unexpected(to, other)),
        }
    }

    fn bytes_transferred(&self) -> u64 {
        self.net.bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Peers(Vec<(u64, u32, Vec<f64>)>);

    impl PeerDirectory for Peers {
        fn peer_count(&self) -> usize {
            self.0.len()
        }
        fn own_version(&self, peer: usize) -> Option<u64> {
            self.0.get(peer).map(|p| p.0)
        }
        fn weights(&self, peer: usize) -> Option<(u32, &[f64])> {
            self.0.get(peer).map(|p| (p.1, p.2.as_slice()))
        }
    }

    fn peers() -> Peers {
        Peers(vec![(0, 1, vec![0.0]), (3, 2, vec![1.5, 2.5]), (1, 4, vec![])])
    }

    #[test]
    fn request_gets_exactly_one_response() {
        let peers = peers();
        let mut net = SimTransport::new(3, 0);
        assert_eq!(net.link(&peers).ping(0, 1).unwrap(), 3);
        let w = net.link(&peers).fetch_weights(0, 1).unwrap();
        assert_eq!(w, PeerWeights { sample_count: 2, params: vec![1.5, 2.5] });
        let kinds: Vec<_> = net.trace().iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            [
                MessageKind::PingRequest,
                MessageKind::PingResponse,
                MessageKind::WeightsRequest,
                MessageKind::WeightsResponse
            ]
        );
        assert_eq!(net.bytes_transferred(), (16 + 24 + 16 + 40) as u64);
        assert_eq!(net.trace()[0].request_id, net.trace()[1].request_id);
    }

    #[test]
    fn unreachable_peer_surfaces_error() {
        let peers = peers();
        let mut net = SimTransport::new(3, 0);
        net.set_unreachable(2, true);
        let err = net.link(&peers).ping(0, 2).unwrap_err();
        assert!(matches!(err, TransportError::Unreachable { peer: 2, .. }));
        assert_eq!(net.trace()[0].fate, Fate::Unreachable);
        assert_eq!(net.bytes_transferred(), 0);
        net.set_unreachable(2, false);
        assert_eq!(net.link(&peers).ping(0, 2).unwrap(), 1);
    }

    #[test]
    fn unknown_peer_rejected() {
        let peers = peers();
        let mut net = SimTransport::new(3, 0);
        assert!(matches!(net.link(&peers).ping(0, 7), Err(TransportError::UnknownPeer(7))));
    }

    fn run(seed: u64) -> Vec<TraceEvent> {
        let peers = peers();
        let mut net = SimTransport::new(3, seed).with_faults(FaultConfig {
            drop_probability: 0.3,
            ..FaultConfig::default()
        });
        for i in 0..50 {
            let _ = net.link(&peers).ping(i % 3, (i + 1) % 3);
            let _ = net.link(&peers).fetch_weights(i % 3, (i + 2) % 3);
        }
        net.trace().to_vec()
    }

    #[test]
    fn traces_are_deterministic() {
        let a = run(5);
        assert_eq!(a, run(5));
        assert_ne!(a, run(6));
        assert!(a.iter().any(|e| e.fate == Fate::Dropped));
    }
}
