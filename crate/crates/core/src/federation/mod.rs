//! The two federated protocols.
//!
//! * FLS: every client fine-tunes, a server averages all models weighted by
//!   sample count, and the average is sent back to everybody.
//! * BrainTorrent: a single initiator pings its peers for their version
//!   counters, pulls weights only from peers whose counter moved since it
//!   last merged them, averages those with its own model and fine-tunes the
//!   result locally.

mod aggregate;
mod braintorrent;
mod fls;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DatasetShard;
use crate::model::{fine_tune, lr_schedule, FineTuneParams, ModelError, ModelSpec, ModelWeights};
use crate::seed::derive_seed;
use crate::transport::{PeerDirectory, TransportError};

pub use aggregate::{aggregate_all_clients, weighted_average, weighted_sum};
pub use braintorrent::{bt_round, pick_initiator, ping_request, select_stale_peers, MergeReport, PingOutcome};
pub use fls::fls_round;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("cannot average weights of different model specs")]
    FingerprintMismatch,
    #[error("nothing to average")]
    EmptyAggregate,
    #[error("sample counts must be positive")]
    ZeroCount,
    #[error("version vectors of length {0} and {1} cannot be compared")]
    LengthMismatch(usize, usize),
    #[error("client index {index} out of range for {n_clients} clients")]
    InvalidClient { index: usize, n_clients: usize },
    #[error("clients must be ordered by index: position {position} holds client {index}")]
    ClientOrder { position: usize, index: usize },
}

/// Per-client vector of the latest model version seen from every client.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VersionVector(Vec<u64>);

impl VersionVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn from_entries(entries: Vec<u64>) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> u64 {
        self.0[j]
    }

    /// Raises entry `j` to `version`; never lowers it.
    pub fn observe(&mut self, j: usize, version: u64) {
        self.0[j] = self.0[j].max(version);
    }

    fn increment(&mut self, j: usize) {
        self.0[j] += 1;
    }

    /// True when no entry of `self` is below the matching entry of `earlier`.
    pub fn dominates(&self, earlier: &VersionVector) -> bool {
        self.len() == earlier.len() && self.0.iter().zip(&earlier.0).all(|(a, b)| a >= b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_index: usize,
    pub weights: ModelWeights,
    pub version: VersionVector,
    pub shard: DatasetShard,
    /// Completed fine-tunes; drives the learning-rate schedule.
    pub own_update_count: u64,
}

impl ClientState {
    pub fn new(client_index: usize, n_clients: usize, weights: ModelWeights, shard: DatasetShard) -> Self {
        Self {
            client_index,
            weights,
            version: VersionVector::zeros(n_clients),
            shard,
            own_update_count: 0,
        }
    }

    pub fn sample_count(&self) -> u64 {
        self.shard.sample_count() as u64
    }

    /// Fine-tunes `start` on this client's shard with the scheduled learning
    /// rate and the client's own shuffle stream.
    pub fn tune(&self, start: &ModelWeights, cfg: &ProtocolConfig) -> Result<ModelWeights, ModelError> {
        let params = FineTuneParams::new(
            cfg.epochs,
            lr_schedule(self.own_update_count, cfg.base_lr),
            cfg.batch_size,
            fine_tune_seed(cfg.shuffle_seed, self.own_update_count),
        );
        Ok(fine_tune(&cfg.spec, start, &self.shard, &params)?.0)
    }

    /// Installs freshly tuned weights and bumps the own counters.
    pub fn complete_update(&mut self, weights: ModelWeights) {
        self.weights = weights;
        self.own_update_count += 1;
        self.version.increment(self.client_index);
    }

    /// `fine_tune` on the current weights, with the usual bookkeeping. Used
    /// for the warm-up pass and for isolated training.
    pub fn local_update(&mut self, cfg: &ProtocolConfig) -> Result<(), ModelError> {
        let tuned = self.tune(&self.weights, cfg)?;
        self.complete_update(tuned);
        Ok(())
    }
}

/// Shuffle seed of a client's `update`-th fine-tune. Independent of the
/// client index: two clients holding the same shard train identically.
pub fn fine_tune_seed(shuffle_seed: u64, update: u64) -> u64 {
    derive_seed(shuffle_seed, &[update])
}

impl PeerDirectory for [ClientState] {
    fn peer_count(&self) -> usize {
        self.len()
    }

    fn own_version(&self, peer: usize) -> Option<u64> {
        self.get(peer).map(|c| c.version.get(c.client_index))
    }

    fn weights(&self, peer: usize) -> Option<(u32, &[f64])> {
        self.get(peer).map(|c| (c.sample_count() as u32, c.weights.params.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeNorm {
    /// Coefficients `a_k / sum of participating a_k`; always a convex combination.
    #[default]
    Participants,
    /// Coefficients `a_k / a` with `a` the total over all clients. Shrinks
    /// the weights when few peers take part.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    #[default]
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PingFailurePolicy {
    /// Treat the peer as having nothing new this round.
    #[default]
    Skip,
    Abort,
}

/// Everything a protocol round needs besides the client states.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub spec: ModelSpec,
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub merge_norm: MergeNorm,
    pub ping_failure: PingFailurePolicy,
    /// Training samples across all clients (`a`); only used by `MergeNorm::Global`.
    pub total_samples: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observe_never_lowers() {
        let mut v = VersionVector::zeros(3);
        v.observe(1, 4);
        v.observe(1, 2);
        assert_eq!(v.entries(), &[0, 4, 0]);
        let before = v.clone();
        v.increment(0);
        assert!(v.dominates(&before));
        assert!(!before.dominates(&v));
    }
}
