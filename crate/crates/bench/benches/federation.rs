use braintorrent::federation::{bt_round, weighted_average, ClientState, MergeNorm, PingFailurePolicy, ProtocolConfig};
use braintorrent::model::{ModelSpec, ModelWeights};
use braintorrent::transport::SimTransport;
use braintorrent_bench::{shards, small_spec, weights};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn averaging(c: &mut Criterion) {
    let mut group = c.benchmark_group("weighted_average");
    for params in [100usize, 10_000, 100_000] {
        let spec = ModelSpec::new(params / 10, vec![], 10);
        let ws = weights(&spec, 8);
        let entries: Vec<(&ModelWeights, u64)> = ws.iter().zip(1..).collect();
        group.bench_with_input(BenchmarkId::from_parameter(spec.param_count()), &entries, |b, e| {
            b.iter(|| weighted_average(e).unwrap())
        });
    }
    group.finish();
}

fn one_round(c: &mut Criterion) {
    let spec = small_spec();
    let init = spec.init(0).unwrap();
    let mut clients: Vec<ClientState> = shards(10)
        .into_iter()
        .map(|s| ClientState::new(s.client_index, 10, init.clone(), s))
        .collect();
    let cfg = ProtocolConfig {
        spec,
        epochs: 2,
        base_lr: 1e-2,
        batch_size: 32,
        shuffle_seed: 0,
        merge_norm: MergeNorm::Participants,
        ping_failure: PingFailurePolicy::Skip,
        total_samples: 20,
    };
    for c in clients.iter_mut() {
        c.local_update(&cfg).unwrap();
    }
    let mut net = SimTransport::new(10, 0);
    c.bench_function("bt_round_10_clients_all_stale", |b| {
        b.iter(|| bt_round(&clients[0], &mut net.link(clients.as_slice()), &cfg).unwrap())
    });
}

criterion_group!(benches, averaging, one_round);
criterion_main!(benches);
