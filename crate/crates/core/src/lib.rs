//! Peer-to-peer federated learning without a server, next to the classic
//! server-based averaging baseline, on a small per-pixel segmentation task.
//!
//! * [`model`]: per-pixel MLP, Adam, fine-tuning and Dice.
//! * [`data`]: synthetic cohort-dependent segmentation images and sharding.
//! * [`federation`]: server rounds and peer-to-peer merge rounds.
//! * [`transport`]: binary wire format, simulated network, TCP.
//! * [`experiments`]: configs, runner, metrics, manifests and sweeps.

pub mod data;
pub mod experiments;
pub mod federation;
pub mod model;
pub mod seed;
pub mod transport;

pub use data::{Dataset, DatasetShard, GenConfig, SegImage};
pub use experiments::{ExperimentConfig, ExperimentError, MetricsRecord, Mode, RunManifest};
pub use federation::{ClientState, FederationError, MergeReport, ProtocolConfig, VersionVector};
pub use model::{ModelError, ModelSpec, ModelWeights};
pub use transport::{Transport, TransportError};
