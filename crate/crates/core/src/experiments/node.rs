//! One BrainTorrent client as its own process, talking to its peers over TCP.
//!
//! Every process derives the same initiator schedule from the seeds. Before
//! running its own round, a node pings every peer until each reports the own
//! version it would have at that point of the schedule, so rounds execute in
//! schedule order and the result matches the simulated run bit for bit.

use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::manifest::{client_weights_name, weights_dir};
use super::metrics::{io_err, save_weights};
use super::runner::initial_clients;
use super::{prepare, ExperimentConfig, ExperimentError, Mode, TransportConfig};
use crate::federation::{bt_round, pick_initiator, ClientState};
use crate::model::{evaluate_dice, ModelWeights};
use crate::transport::{PeerServer, PeerSnapshot, SharedSnapshot, TcpTransport, Transport, TransportError};

pub const NODE_SUMMARY_FILE: &str = "node.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeOptions {
    /// How long a node waits for its peers to catch up before giving up.
    pub barrier_timeout: Duration,
    pub poll_interval: Duration,
    pub request_timeout: Duration,
}

impl Default for NodeOptions {
    fn default() -> Self {
        Self {
            barrier_timeout: Duration::from_secs(300),
            poll_interval: Duration::from_millis(10),
            request_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub client_index: usize,
    pub rounds_initiated: u64,
    pub own_update_count: u64,
    pub final_dice: f64,
    pub bytes_transferred: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeOutput {
    pub summary: NodeSummary,
    pub final_weights: ModelWeights,
}

/// Initiator of every BrainTorrent round after the warm-up.
pub fn initiator_schedule(cfg: &ExperimentConfig) -> Vec<usize> {
    (0..cfg.bt_rounds())
        .map(|r| pick_initiator(r, cfg.n_clients, cfg.seeds.initiator))
        .collect()
}

/// Own version of every client once the first `rounds` scheduled rounds ran.
pub fn expected_versions(cfg: &ExperimentConfig, schedule: &[usize], rounds: usize) -> Vec<u64> {
    let mut v = vec![u64::from(cfg.warmup); cfg.n_clients];
    for &i in &schedule[..rounds] {
        v[i] += 1;
    }
    v
}

fn publish(state: &ClientState, shared: &SharedSnapshot) {
    let snap = PeerSnapshot {
        own_version: state.version.get(state.client_index),
        sample_count: state.sample_count() as u32,
        params: Arc::new(state.weights.params.clone()),
    };
    *shared.write().unwrap_or_else(|p| p.into_inner()) = snap;
}

struct Barrier<'a> {
    me: usize,
    transport: &'a mut TcpTransport,
    opts: NodeOptions,
    /// Peers that answered at least once; a later silence at the very end
    /// means they finished and shut down.
    responded: Vec<bool>,
}

impl Barrier<'_> {
    fn wait(&mut self, expected: &[u64], finishing: bool) -> Result<(), ExperimentError> {
        let deadline = Instant::now() + self.opts.barrier_timeout;
        let mut pending: Vec<usize> = (0..expected.len()).filter(|&j| j != self.me).collect();
        while !pending.is_empty() {
            let mut still = Vec::new();
            for j in pending {
                match self.transport.ping(self.me, j) {
                    Ok(v) if v == expected[j] || (finishing && v > expected[j]) => self.responded[j] = true,
                    Ok(v) if v > expected[j] => {
                        return Err(ExperimentError::Format(format!(
                            "peer {j} is at version {v}, ahead of the schedule ({})",
                            expected[j]
                        )))
                    }
                    Ok(_) => {
                        self.responded[j] = true;
                        still.push(j);
                    }
                    Err(e) if e.is_unreachable() => {
                        if !(finishing && self.responded[j]) {
                            still.push(j);
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            pending = still;
            if pending.is_empty() {
                break;
            }
            if Instant::now() > deadline {
                return Err(TransportError::Unreachable {
                    peer: pending[0],
                    reason: "peer did not reach the expected version in time".into(),
                }
                .into());
            }
            thread::sleep(self.opts.poll_interval);
        }
        Ok(())
    }
}

/// Runs client `client_index` of a `tcp` BrainTorrent config to completion.
/// Writes `weights/client_<i>.btwt` and `node.json` into `out` when given.
pub fn run_tcp_node(
    cfg: &ExperimentConfig,
    client_index: usize,
    out: Option<&Path>,
    opts: NodeOptions,
) -> Result<NodeOutput, ExperimentError> {
    let TransportConfig::Tcp { peers } = &cfg.transport else {
        return Err(ExperimentError::Config("run_tcp_node needs a tcp transport config".into()));
    };
    if cfg.mode != Mode::Braintorrent {
        return Err(ExperimentError::Config("only braintorrent runs over tcp".into()));
    }
    if client_index >= cfg.n_clients {
        return Err(ExperimentError::Config(format!(
            "client index {client_index} out of range for {} clients",
            cfg.n_clients
        )));
    }
    let prepared = prepare(cfg)?;
    let mut clients = initial_clients(cfg, &prepared.shards)?;
    let total_samples = clients.iter().map(ClientState::sample_count).sum();
    let proto = cfg.protocol(total_samples);
    let mut state = clients.swap_remove(client_index);

    let endpoint = &peers
        .iter()
        .find(|p| p.client_index == client_index)
        .expect("validated peer table")
        .endpoint;
    let shared: SharedSnapshot = Arc::new(RwLock::new(PeerSnapshot {
        own_version: 0,
        sample_count: 0,
        params: Arc::new(Vec::new()),
    }));
    publish(&state, &shared);
    let server = PeerServer::spawn(endpoint.as_str(), client_index, Arc::clone(&shared)).map_err(io_err(Path::new(endpoint)))?;
    info!("client {client_index} serving on {}", server.local_addr());

    let mut transport = TcpTransport::new(client_index, peers).with_timeout(opts.request_timeout);
    if cfg.warmup {
        state.local_update(&proto)?;
        publish(&state, &shared);
    }
    let schedule = initiator_schedule(cfg);
    let mut barrier = Barrier {
        me: client_index,
        transport: &mut transport,
        opts,
        responded: vec![false; cfg.n_clients],
    };
    let mut initiated = 0;
    for (round, &initiator) in schedule.iter().enumerate() {
        if initiator != client_index {
            continue;
        }
        barrier.wait(&expected_versions(cfg, &schedule, round), false)?;
        let (next, report) = bt_round(&state, &mut *barrier.transport, &proto)?;
        debug!("round {round}: merged {:?}", report.participants);
        state = next;
        publish(&state, &shared);
        initiated += 1;
    }
    barrier.wait(&expected_versions(cfg, &schedule, schedule.len()), true)?;
    server.shutdown();

    let summary = NodeSummary {
        client_index,
        rounds_initiated: initiated,
        own_update_count: state.own_update_count,
        final_dice: evaluate_dice(&cfg.model, &state.weights, &prepared.dataset.test)?,
        bytes_transferred: transport.bytes_transferred(),
    };
    if let Some(dir) = out {
        let wdir = weights_dir(dir);
        fs::create_dir_all(&wdir).map_err(io_err(&wdir))?;
        save_weights(&state.weights, &dir.join(client_weights_name(client_index)))?;
        let path = dir.join(NODE_SUMMARY_FILE);
        fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(io_err(&path))?;
    }
    Ok(NodeOutput {
        summary,
        final_weights: state.weights,
    })
}
