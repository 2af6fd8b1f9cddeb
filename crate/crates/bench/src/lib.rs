//! Shared fixtures for the benchmarks.

use braintorrent::data::{generate_dataset, split_uniform, DatasetShard, GenConfig};
use braintorrent::model::{ModelSpec, ModelWeights};

pub fn small_spec() -> ModelSpec {
    ModelSpec::new(braintorrent::data::FEATURE_CHANNELS, vec![16], 4)
}

/// Ten shards of the default synthetic dataset.
pub fn shards(n_clients: usize) -> Vec<DatasetShard> {
    let ds = generate_dataset(&GenConfig::default()).expect("default config is valid");
    split_uniform(&ds.train, n_clients, 0).expect("enough images")
}

pub fn weights(spec: &ModelSpec, n: usize) -> Vec<ModelWeights> {
    (0..n as u64).map(|s| spec.init(s).expect("valid spec")).collect()
}
