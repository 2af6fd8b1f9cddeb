use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    weighted_average, weighted_sum, ClientState, FederationError, MergeNorm, PingFailurePolicy, ProtocolConfig,
    VersionVector,
};
use crate::model::ModelWeights;
use crate::seed::derive_seed;
use crate::transport::Transport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PingOutcome {
    pub v_new: VersionVector,
    /// Peers that did not answer; their entries were copied from the
    /// initiator's own vector, so they never count as stale.
    pub unreachable: Vec<usize>,
}

/// Outcome of one successful BrainTorrent round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub initiator: usize,
    /// Clients whose weights went into the merge, ascending; includes the initiator.
    pub participants: BTreeSet<usize>,
    pub stale: Vec<usize>,
    pub unreachable: Vec<usize>,
    /// Bytes moved by the initiator's transport during the round.
    pub bytes_transferred: u64,
    pub v_old: VersionVector,
    pub v_new: VersionVector,
}

/// Collects every peer's own version counter. Read-only on both sides.
pub fn ping_request<T: Transport + ?Sized>(
    initiator: &ClientState,
    transport: &mut T,
    policy: PingFailurePolicy,
) -> Result<PingOutcome, FederationError> {
    let me = initiator.client_index;
    let mut v_new = initiator.version.clone();
    let mut unreachable = Vec::new();
    for peer in (0..v_new.len()).filter(|&j| j != me) {
        match transport.ping(me, peer) {
            Ok(version) => v_new.0[peer] = version,
            Err(e) if e.is_unreachable() && policy == PingFailurePolicy::Skip => unreachable.push(peer),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(PingOutcome { v_new, unreachable })
}

/// `{ j != initiator : v_new[j] > v_old[j] }`, ascending.
pub fn select_stale_peers(
    v_old: &VersionVector,
    v_new: &VersionVector,
    initiator: usize,
) -> Result<Vec<usize>, FederationError> {
    if v_old.len() != v_new.len() {
        return Err(FederationError::LengthMismatch(v_old.len(), v_new.len()));
    }
    Ok((0..v_old.len())
        .filter(|&j| j != initiator && v_new.get(j) > v_old.get(j))
        .collect())
}

/// Seeded uniform choice of the round's initiator. A pure function of its
/// arguments, so every process can compute the schedule independently.
pub fn pick_initiator(round_index: u64, n_clients: usize, seed: u64) -> usize {
    assert!(n_clients >= 1, "pick_initiator needs at least one client");
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[round_index])).random_range(0..n_clients)
}

pub(crate) struct Gathered {
    pub v_old: VersionVector,
    pub ping: PingOutcome,
    pub stale: Vec<usize>,
    pub merged: ModelWeights,
}

/// Ping, select, fetch and merge. Touches nothing but the transport.
pub(crate) fn gather<T: Transport + ?Sized>(
    initiator: &ClientState,
    transport: &mut T,
    cfg: &ProtocolConfig,
) -> Result<Gathered, FederationError> {
    let me = initiator.client_index;
    let v_old = initiator.version.clone();
    let ping = ping_request(initiator, transport, cfg.ping_failure)?;
    let stale = select_stale_peers(&v_old, &ping.v_new, me)?;

    let mut fetched = Vec::with_capacity(stale.len());
    for &peer in &stale {
        let reply = transport.fetch_weights(me, peer)?;
        if reply.sample_count == 0 {
            return Err(FederationError::ZeroCount);
        }
        fetched.push((peer, cfg.spec.weights_from_params(reply.params)?, u64::from(reply.sample_count)));
    }
    fetched.push((me, initiator.weights.clone(), initiator.sample_count()));
    fetched.sort_by_key(|(index, _, _)| *index);

    let entries: Vec<(&ModelWeights, u64)> = fetched.iter().map(|(_, w, a)| (w, *a)).collect();
    let merged = match cfg.merge_norm {
        MergeNorm::Participants => weighted_average(&entries)?,
        MergeNorm::Global => weighted_sum(&entries, cfg.total_samples)?,
    };
    Ok(Gathered {
        v_old,
        ping,
        stale,
        merged,
    })
}

/// One BrainTorrent round driven by `initiator`.
///
/// Returns the initiator's next state; peers are only ever read. Any fetch
/// failure aborts the round before anything is produced.
pub fn bt_round<T: Transport + ?Sized>(
    initiator: &ClientState,
    transport: &mut T,
    cfg: &ProtocolConfig,
) -> Result<(ClientState, MergeReport), FederationError> {
    let n = initiator.version.len();
    if initiator.client_index >= n {
        return Err(FederationError::InvalidClient {
            index: initiator.client_index,
            n_clients: n,
        });
    }
    let bytes_before = transport.bytes_transferred();
    let Gathered {
        v_old,
        ping,
        stale,
        merged,
    } = gather(initiator, transport, cfg)?;

    let mut next = initiator.clone();
    for &peer in &stale {
        next.version.observe(peer, ping.v_new.get(peer));
    }
    let tuned = next.tune(&merged, cfg)?;
    next.complete_update(tuned);

    let mut participants: BTreeSet<usize> = stale.iter().copied().collect();
    participants.insert(initiator.client_index);
    let report = MergeReport {
        initiator: initiator.client_index,
        participants,
        stale,
        unreachable: ping.unreachable,
        bytes_transferred: transport.bytes_transferred() - bytes_before,
        v_old,
        v_new: ping.v_new,
    };
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetShard, SegImage};
    use crate::model::ModelSpec;
    use crate::transport::SimTransport;

    fn spec() -> ModelSpec {
        ModelSpec::new(1, vec![], 2)
    }

    fn shard(index: usize, samples: usize) -> DatasetShard {
        let img = SegImage {
            height: 1,
            width: 1,
            channels: 1,
            features: vec![1.0],
            labels: vec![index % 2],
            cohort: 0.0,
        };
        DatasetShard::new(index, vec![img; samples])
    }

    fn cfg(merge_norm: MergeNorm) -> ProtocolConfig {
        ProtocolConfig {
            spec: spec(),
            epochs: 2,
            base_lr: 1e-3,
            batch_size: 1,
            shuffle_seed: 0,
            merge_norm,
            ping_failure: PingFailurePolicy::Skip,
            total_samples: 4,
        }
    }

    fn constant(value: f64) -> ModelWeights {
        spec().weights_from_params(vec![value; 4]).unwrap()
    }

    fn clients(values: &[f64]) -> Vec<ClientState> {
        let n = values.len();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| ClientState::new(i, n, constant(v), shard(i, 1)))
            .collect()
    }

    #[test]
    fn v_equal_means_nothing_stale() {
        let v = VersionVector::from_entries(vec![3, 1, 4]);
        assert!(select_stale_peers(&v, &v, 0).unwrap().is_empty());
    }

    #[test]
    fn stale_set_of_the_five_client_picture() {
        let old = VersionVector::zeros(5);
        let new = VersionVector::from_entries(vec![0, 1, 1, 0, 0]);
        assert_eq!(select_stale_peers(&old, &new, 0).unwrap(), vec![1, 2]);
    }

    #[test]
    fn stale_excludes_initiator_and_checks_length() {
        let old = VersionVector::zeros(3);
        let new = VersionVector::from_entries(vec![5, 0, 1]);
        assert_eq!(select_stale_peers(&old, &new, 0).unwrap(), vec![2]);
        assert!(select_stale_peers(&old, &VersionVector::zeros(2), 0).is_err());
    }

    #[test]
    fn fresh_ping_is_all_zero() {
        let cs = clients(&[0.0, 1.0, 2.0]);
        let mut net = SimTransport::new(3, 0);
        let out = ping_request(&cs[0], &mut net.link(cs.as_slice()), PingFailurePolicy::Abort).unwrap();
        assert_eq!(out.v_new, VersionVector::zeros(3));
    }

    #[test]
    fn ping_reads_peer_counters_only() {
        let mut cs = clients(&[0.0, 1.0, 2.0]);
        for _ in 0..3 {
            cs[2].complete_update(constant(2.0));
        }
        cs[0].version.0[0] = 7;
        let before = cs.clone();
        let mut net = SimTransport::new(3, 0);
        let out = ping_request(&cs[0], &mut net.link(cs.as_slice()), PingFailurePolicy::Abort).unwrap();
        assert_eq!(out.v_new.entries(), &[7, 0, 3]);
        assert_eq!(cs, before);
    }

    #[test]
    fn ping_policy_controls_unreachable_peers() {
        let cs = clients(&[0.0, 1.0, 2.0]);
        let mut net = SimTransport::new(3, 0);
        net.set_unreachable(1, true);
        let out = ping_request(&cs[0], &mut net.link(cs.as_slice()), PingFailurePolicy::Skip).unwrap();
        assert_eq!(out.unreachable, vec![1]);
        let err = ping_request(&cs[0], &mut net.link(cs.as_slice()), PingFailurePolicy::Abort);
        assert!(matches!(err, Err(FederationError::Transport(e)) if e.peer() == 1));
    }

    #[test]
    fn nothing_stale_merges_only_self() {
        let cs = clients(&[0.5, 1.0, 2.0]);
        let mut net = SimTransport::new(3, 0);
        let g = gather(&cs[0], &mut net.link(cs.as_slice()), &cfg(MergeNorm::Participants)).unwrap();
        assert!(g.stale.is_empty());
        assert!(g.merged.bitwise_eq(&cs[0].weights));
        let (next, report) = bt_round(&cs[0], &mut net.link(cs.as_slice()), &cfg(MergeNorm::Participants)).unwrap();
        assert_eq!(report.participants, BTreeSet::from([0]));
        assert_eq!(next.version.entries(), &[1, 0, 0]);
        assert_eq!(next.own_update_count, 1);
    }

    #[test]
    fn merge_of_three_equal_count_participants_is_their_mean() {
        // Peers 0 and 2 hold 1.0 and 3.0 and are stale; initiator 1 holds 2.0.
        let mut cs = clients(&[1.0, 2.0, 3.0]);
        cs[0].complete_update(constant(1.0));
        cs[2].complete_update(constant(3.0));
        let mut net = SimTransport::new(3, 0);
        let g = gather(&cs[1], &mut net.link(cs.as_slice()), &cfg(MergeNorm::Participants)).unwrap();
        assert_eq!(g.stale, vec![0, 2]);
        // brute force: ascending-index sum of a_k / sum(a) * w_k
        let third = 1.0 / 3.0;
        let expected = third * 1.0 + third * 2.0 + third * 3.0;
        assert!(g.merged.params.iter().all(|&p| p == expected));
        assert!((expected - 2.0).abs() < 1e-15);
    }

    #[test]
    fn global_norm_uses_total_samples() {
        let mut cs = clients(&[2.0, 2.0, 2.0]);
        cs[1].complete_update(constant(2.0));
        let mut net = SimTransport::new(3, 0);
        let g = gather(&cs[0], &mut net.link(cs.as_slice()), &cfg(MergeNorm::Global)).unwrap();
        // two participants of one sample each over a = 4
        assert!(g.merged.params.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn round_updates_versions_of_merged_peers() {
        let mut cs = clients(&[0.0, 1.0, 2.0, 3.0]);
        cs[1].complete_update(constant(1.0));
        cs[1].complete_update(constant(1.0));
        cs[3].complete_update(constant(3.0));
        let mut net = SimTransport::new(4, 0);
        let (next, report) = bt_round(&cs[0], &mut net.link(cs.as_slice()), &cfg(MergeNorm::Participants)).unwrap();
        assert_eq!(report.stale, vec![1, 3]);
        assert_eq!(next.version.entries(), &[1, 2, 0, 1]);
        assert!(report.bytes_transferred > 0);

        // A second round by the same initiator sees nothing new.
        cs[0] = next;
        let (next, report) = bt_round(&cs[0], &mut net.link(cs.as_slice()), &cfg(MergeNorm::Participants)).unwrap();
        assert!(report.stale.is_empty());
        assert_eq!(next.version.entries(), &[2, 2, 0, 1]);
    }

    /// Answers pings but drops every weight request.
    struct NoWeights<'a, T: Transport>(&'a mut T);

    impl<T: Transport> Transport for NoWeights<'_, T> {
        fn ping(&mut self, from: usize, to: usize) -> Result<u64, crate::transport::TransportError> {
            self.0.ping(from, to)
        }
        fn fetch_weights(
            &mut self,
            _from: usize,
            to: usize,
        ) -> Result<crate::transport::PeerWeights, crate::transport::TransportError> {
            Err(crate::transport::TransportError::Unreachable {
                peer: to,
                reason: "test".into(),
            })
        }
        fn bytes_transferred(&self) -> u64 {
            self.0.bytes_transferred()
        }
    }

    #[test]
    fn failed_fetch_aborts_round() {
        let mut cs = clients(&[0.0, 1.0]);
        cs[1].complete_update(constant(1.0));
        let before = cs.clone();
        let mut net = SimTransport::new(2, 0);
        let mut link = net.link(cs.as_slice());
        let err = bt_round(&cs[0], &mut NoWeights(&mut link), &cfg(MergeNorm::Participants));
        assert!(matches!(err, Err(FederationError::Transport(e)) if e.peer() == 1));
        assert_eq!(cs, before);
    }

    #[test]
    fn lost_ping_means_not_stale() {
        let mut cs = clients(&[0.0, 1.0]);
        cs[1].complete_update(constant(1.0));
        let mut net = SimTransport::new(2, 0);
        net.faults_mut().drop_probability = 1.0;
        let (_, report) = bt_round(&cs[0], &mut net.link(cs.as_slice()), &cfg(MergeNorm::Participants)).unwrap();
        assert_eq!(report.unreachable, vec![1]);
        assert!(report.stale.is_empty());
    }

    #[test]
    fn bad_initiator_rejected() {
        let mut cs = clients(&[0.0, 1.0]);
        cs[0].client_index = 5;
        let mut net = SimTransport::new(2, 0);
        assert!(matches!(
            bt_round(&cs[0], &mut net.link(cs.as_slice()), &cfg(MergeNorm::Participants)),
            Err(FederationError::InvalidClient { .. })
        ));
    }

    #[test]
    fn initiator_choice() {
        assert!((0..100).all(|r| pick_initiator(r, 1, 9) == 0));
        let a: Vec<usize> = (0..50).map(|r| pick_initiator(r, 5, 3)).collect();
        let b: Vec<usize> = (0..50).map(|r| pick_initiator(r, 5, 3)).collect();
        assert_eq!(a, b);
        let mut counts = [0usize; 5];
        (0..10_000).for_each(|r| counts[pick_initiator(r, 5, 11)] += 1);
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((0.18..=0.22).contains(&freq), "{counts:?}");
        }
    }
}
