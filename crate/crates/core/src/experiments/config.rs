use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::data::{CohortStrata, GenConfig, FEATURE_CHANNELS};
use crate::federation::{AggregateMode, MergeNorm, PingFailurePolicy, ProtocolConfig};
use crate::model::ModelSpec;
use crate::seed::derive_seed;
use crate::transport::PeerAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fls,
    Braintorrent,
    /// One model trained on every training image.
    Pooled,
    /// Every client trains alone and never communicates.
    OnlyClient,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fls => "fls",
            Mode::Braintorrent => "braintorrent",
            Mode::Pooled => "pooled",
            Mode::OnlyClient => "only_client",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fls" => Ok(Mode::Fls),
            "braintorrent" | "bt" => Ok(Mode::Braintorrent),
            "pooled" => Ok(Mode::Pooled),
            "only_client" => Ok(Mode::OnlyClient),
            other => Err(ExperimentError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SplitConfig {
    #[default]
    Uniform,
    /// Client `i` receives exactly the images of cohort bucket `i`.
    Cohort { boundaries: Vec<f64>, counts: Vec<usize> },
}

/// Generator settings; the seed comes from `Seeds::data` and the cohort
/// strata from the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub num_train: usize,
    pub num_test: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub noise_std: f64,
    pub cohort_shift: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            num_train: g.num_train,
            num_test: g.num_test,
            height: g.height,
            width: g.width,
            num_classes: g.num_classes,
            noise_std: g.noise_std,
            // overlapping cohorts: a lone client cannot cover the spread
            cohort_shift: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
    pub initiator: u64,
}

impl Seeds {
    /// Four independent seeds from one number.
    pub fn from_base(base: u64) -> Self {
        Self {
            data: derive_seed(base, &[0]),
            init: derive_seed(base, &[1]),
            shuffle: derive_seed(base, &[2]),
            initiator: derive_seed(base, &[3]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TransportConfig {
    #[default]
    Sim,
    Tcp { peers: Vec<PeerAddress> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n_clients: usize,
    pub split: SplitConfig,
    /// Server rounds `R`; BrainTorrent runs `R * n_clients` fine-tunes.
    pub rounds_fls: u64,
    pub model: ModelSpec,
    pub data: DataConfig,
    pub base_lr: f64,
    pub epochs_per_round: usize,
    /// Pixels per optimizer step.
    pub batch_size: usize,
    pub merge_norm: MergeNorm,
    pub aggregate: AggregateMode,
    /// BrainTorrent only: every client fine-tunes once on its own shard
    /// before the first merge. Counts toward the update budget.
    pub warmup: bool,
    pub ping_failure: PingFailurePolicy,
    pub seeds: Seeds,
    pub transport: TransportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Braintorrent,
            n_clients: 10,
            split: SplitConfig::Uniform,
            rounds_fls: 16,
            model: ModelSpec::new(FEATURE_CHANNELS, vec![16], 4),
            data: DataConfig::default(),
            base_lr: 1e-2,
            epochs_per_round: 2,
            batch_size: 32,
            merge_norm: MergeNorm::default(),
            aggregate: AggregateMode::default(),
            warmup: true,
            ping_failure: PingFailurePolicy::default(),
            seeds: Seeds::default(),
            transport: TransportConfig::Sim,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        self.model.validate()?;
        self.gen_config().validate()?;
        if self.model.input_dim != FEATURE_CHANNELS {
            return bad(format!("model input_dim must be {FEATURE_CHANNELS}, got {}", self.model.input_dim));
        }
        if self.model.num_classes != self.data.num_classes {
            return bad(format!(
                "model has {} classes but the data has {}",
                self.model.num_classes, self.data.num_classes
            ));
        }
        if self.n_clients == 0 || self.n_clients > u16::MAX as usize {
            return bad(format!("n_clients must be in 1..=65535, got {}", self.n_clients));
        }
        if self.rounds_fls == 0 {
            return bad("rounds_fls must be at least 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.epochs_per_round == 0 || self.batch_size == 0 {
            return bad("epochs_per_round and batch_size must be at least 1".into());
        }
        if let SplitConfig::Cohort { counts, .. } = &self.split {
            if counts.len() != self.n_clients {
                return bad(format!("cohort split defines {} clients, n_clients is {}", counts.len(), self.n_clients));
            }
        }
        if let TransportConfig::Tcp { peers } = &self.transport {
            let mut seen: Vec<usize> = peers.iter().map(|p| p.client_index).collect();
            seen.sort_unstable();
            if seen != (0..self.n_clients).collect::<Vec<_>>() {
                return bad("tcp peer table must list every client index exactly once".into());
            }
        }
        Ok(())
    }

    pub fn gen_config(&self) -> GenConfig {
        let d = &self.data;
        GenConfig {
            num_train: d.num_train,
            num_test: d.num_test,
            height: d.height,
            width: d.width,
            num_classes: d.num_classes,
            noise_std: d.noise_std,
            cohort_shift: d.cohort_shift,
            seed: self.seeds.data,
            cohort_strata: match &self.split {
                SplitConfig::Uniform => None,
                SplitConfig::Cohort { boundaries, counts } => Some(CohortStrata {
                    boundaries: boundaries.clone(),
                    counts: counts.clone(),
                }),
            },
        }
    }

    pub(crate) fn protocol(&self, total_samples: u64) -> ProtocolConfig {
        ProtocolConfig {
            spec: self.model.clone(),
            epochs: self.epochs_per_round,
            base_lr: self.base_lr,
            batch_size: self.batch_size,
            shuffle_seed: self.seeds.shuffle,
            merge_norm: self.merge_norm,
            ping_failure: self.ping_failure,
            total_samples,
        }
    }

    /// Fine-tune calls every client makes; the same for all modes.
    pub fn updates_per_client(&self) -> u64 {
        self.rounds_fls
    }

    /// Number of initiator rounds after the optional warm-up pass.
    pub fn bt_rounds(&self) -> u64 {
        let n = self.n_clients as u64;
        let total = self.rounds_fls * n;
        if self.warmup {
            total - n
        } else {
            total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig {
            split: SplitConfig::Cohort {
                boundaries: vec![20.0, 30.0, 40.0, 50.0],
                counts: vec![5, 9, 2, 1, 3],
            },
            n_clients: 5,
            transport: TransportConfig::Tcp {
                peers: (0..5)
                    .map(|i| PeerAddress {
                        client_index: i,
                        endpoint: format!("127.0.0.1:{}", 9000 + i),
                    })
                    .collect(),
            },
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(ExperimentConfig::from_json(r#"{"mode":"fls","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"data":{"seed":3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seeds":{"other":3}}"#).is_err());
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"mode":"fls","n_clients":5}"#).unwrap();
        assert_eq!(cfg.mode, Mode::Fls);
        assert_eq!(cfg.rounds_fls, 16);
    }

    #[test]
    fn budget_is_r_times_n() {
        let cfg = ExperimentConfig {
            rounds_fls: 8,
            n_clients: 5,
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.bt_rounds() + 5, 40);
        assert_eq!(ExperimentConfig { warmup: false, ..cfg }.bt_rounds(), 40);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.num_classes = 3;
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            split: SplitConfig::Cohort {
                boundaries: vec![50.0],
                counts: vec![10, 10],
            },
            n_clients: 3,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
