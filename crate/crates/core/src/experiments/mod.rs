//! Experiment harness: configs, the training runner, metrics files, run
//! manifests, the client sweeps and the per-process TCP driver.

mod config;
mod manifest;
mod metrics;
mod node;
mod report;
mod runner;
mod sweep;

use thiserror::Error;

use crate::data::DataError;
use crate::federation::FederationError;
use crate::model::ModelError;
use crate::transport::TransportError;

pub use config::{DataConfig, ExperimentConfig, Mode, Seeds, SplitConfig, TransportConfig};
pub use manifest::{
    rerun_manifest, run_to_dir, RunManifest, RunStatus, FAILED_MARKER, MANIFEST_FILE, METRICS_CSV, METRICS_JSON,
    TIMINGS_CSV,
};
pub use metrics::{
    emit_metrics, emit_timings, load_weights, read_metrics_csv, read_weights, save_weights, write_metrics_csv,
    write_metrics_json, write_weights, MetricsFormat, WEIGHTS_FORMAT_VERSION, WEIGHTS_MAGIC,
};
pub use node::{expected_versions, initiator_schedule, run_tcp_node, NodeOptions, NodeOutput, NodeSummary, NODE_SUMMARY_FILE};
pub use report::{report, REPORT_CSV};
pub use runner::{prepare, run_training, MetricsRecord, Prepared, RunFailure, RunOutput};
pub use sweep::{
    cohort_config, run_experiment1, run_experiment2, Experiment1, Experiment2, SweepRun, Table, COHORT_BOUNDARIES,
    COHORT_COUNTS, PER_CLIENT_TABLE_CLIENTS, SWEEP_CLIENT_COUNTS,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}
