use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, SplitConfig, TransportConfig};
use super::ExperimentError;
use crate::data::{generate_dataset, split_by_cohort, split_uniform, Dataset, DatasetShard, SegImage};
use crate::federation::{aggregate_all_clients, bt_round, fls_round, pick_initiator, ClientState};
use crate::model::{evaluate_dice, ModelSpec, ModelWeights};
use crate::seed::derive_seed;
use crate::transport::codec::weights_frame_len;
use crate::transport::SimTransport;

const SPLIT_STREAM: u64 = 0x5911;
const SIM_STREAM: u64 = 0x5117;

/// One evaluation point. `round_index` counts server-round equivalents:
/// after record `k` every client has made `k` fine-tunes on average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round_index: u64,
    pub per_client_dice: Vec<f64>,
    pub avg_client_dice: f64,
    pub aggregated_model_dice: f64,
    /// Cumulative.
    pub bytes_transferred: u64,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub final_weights: Vec<ModelWeights>,
    pub aggregated: ModelWeights,
    /// Aggregated model at every evaluation point.
    pub trajectory: Vec<ModelWeights>,
    pub shard_sizes: Vec<usize>,
    pub fine_tune_calls: u64,
}

/// A run that stopped early, with everything recorded before the error.
#[derive(Debug)]
pub struct RunFailure {
    pub records: Vec<MetricsRecord>,
    pub error: ExperimentError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted after {} evaluations: {}", self.records.len(), self.error)
    }
}

impl std::error::Error for RunFailure {}

impl<E: Into<ExperimentError>> From<E> for RunFailure {
    fn from(e: E) -> Self {
        Self {
            records: Vec::new(),
            error: e.into(),
        }
    }
}

/// Dataset and shards a config resolves to. Pooled runs get one shard with
/// every training image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub dataset: Dataset,
    pub shards: Vec<DatasetShard>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let dataset = generate_dataset(&cfg.gen_config())?;
    let split_seed = derive_seed(cfg.seeds.data, &[SPLIT_STREAM]);
    let shards = match (&cfg.mode, &cfg.split) {
        (Mode::Pooled, _) => split_uniform(&dataset.train, 1, split_seed)?,
        (_, SplitConfig::Uniform) => split_uniform(&dataset.train, cfg.n_clients, split_seed)?,
        (_, SplitConfig::Cohort { boundaries, counts }) => split_by_cohort(&dataset.train, boundaries, Some(counts))?,
    };
    Ok(Prepared { dataset, shards })
}

pub(crate) fn initial_clients(cfg: &ExperimentConfig, shards: &[DatasetShard]) -> Result<Vec<ClientState>, ExperimentError> {
    let init = cfg.model.init(cfg.seeds.init)?;
    let n = shards.len();
    Ok(shards
        .iter()
        .map(|s| ClientState::new(s.client_index, n, init.clone(), s.clone()))
        .collect())
}

struct Recorder<'a> {
    spec: &'a ModelSpec,
    test: &'a [SegImage],
    started: Instant,
    records: Vec<MetricsRecord>,
    trajectory: Vec<ModelWeights>,
}

impl Recorder<'_> {
    fn record(&mut self, weights: &[&ModelWeights], aggregated: &ModelWeights, bytes: u64) -> Result<(), ExperimentError> {
        let per_client_dice: Vec<f64> = weights
            .par_iter()
            .map(|w| evaluate_dice(self.spec, w, self.test))
            .collect::<Result<_, _>>()?;
        let aggregated_model_dice = evaluate_dice(self.spec, aggregated, self.test)?;
        let avg_client_dice = per_client_dice.iter().sum::<f64>() / per_client_dice.len() as f64;
        let round_index = self.records.len() as u64 + 1;
        debug!("round {round_index}: avg {avg_client_dice:.4} aggregated {aggregated_model_dice:.4}");
        self.records.push(MetricsRecord {
            round_index,
            per_client_dice,
            avg_client_dice,
            aggregated_model_dice,
            bytes_transferred: bytes,
            wall_time_ms: self.started.elapsed().as_millis() as u64,
        });
        self.trajectory.push(aggregated.clone());
        Ok(())
    }
}

/// Runs one configuration over the simulated network.
///
/// Every mode makes `rounds_fls` fine-tunes per client and produces
/// `rounds_fls` records.
pub fn run_training(cfg: &ExperimentConfig) -> Result<RunOutput, RunFailure> {
    if let TransportConfig::Tcp { .. } = cfg.transport {
        return Err(ExperimentError::Config("tcp runs are driven per process by run_tcp_node".into()).into());
    }
    let Prepared { dataset, shards } = prepare(cfg)?;
    let mut clients = initial_clients(cfg, &shards)?;
    let total_samples: u64 = clients.iter().map(ClientState::sample_count).sum();
    let proto = cfg.protocol(total_samples);
    let n = clients.len();
    info!("{} run: {n} clients, {} server-round equivalents", cfg.mode.as_str(), cfg.rounds_fls);

    let mut rec = Recorder {
        spec: &cfg.model,
        test: &dataset.test,
        started: Instant::now(),
        records: Vec::new(),
        trajectory: Vec::new(),
    };
    let mut calls = 0u64;
    let result = (|| -> Result<(), ExperimentError> {
        match cfg.mode {
            Mode::Fls => {
                let frame = weights_frame_len(cfg.model.param_count()) as u64;
                let mut server = clients[0].weights.clone();
                for round in 0..cfg.rounds_fls {
                    server = fls_round(&mut clients, &server, &proto)?;
                    calls += n as u64;
                    // down to every client and back up
                    let bytes = (round + 1) * 2 * n as u64 * frame;
                    let ws: Vec<&ModelWeights> = clients.iter().map(|c| &c.weights).collect();
                    rec.record(&ws, &server, bytes)?;
                }
            }
            Mode::Braintorrent => {
                let mut net = SimTransport::new(n, derive_seed(cfg.seeds.initiator, &[SIM_STREAM]));
                if cfg.warmup {
                    local_updates(&mut clients, &proto)?;
                    calls += n as u64;
                    record_clients(&mut rec, &clients, cfg, net.bytes_transferred())?;
                }
                for round in 0..cfg.bt_rounds() {
                    let i = pick_initiator(round, n, cfg.seeds.initiator);
                    let (next, report) = bt_round(&clients[i], &mut net.link(clients.as_slice()), &proto)?;
                    debug!("bt round {round}: initiator {i}, merged {:?}", report.participants);
                    clients[i] = next;
                    calls += 1;
                    if calls.is_multiple_of(n as u64) {
                        record_clients(&mut rec, &clients, cfg, net.bytes_transferred())?;
                    }
                }
            }
            Mode::Pooled | Mode::OnlyClient => {
                for _ in 0..cfg.rounds_fls {
                    local_updates(&mut clients, &proto)?;
                    calls += n as u64;
                    record_clients(&mut rec, &clients, cfg, 0)?;
                }
            }
        }
        Ok(())
    })();

    let Recorder { records, trajectory, .. } = rec;
    if let Err(error) = result {
        return Err(RunFailure { records, error });
    }
    let aggregated = match cfg.mode {
        Mode::Fls => clients[0].weights.clone(),
        _ => aggregate_all_clients(&clients, cfg.aggregate).map_err(ExperimentError::from)?,
    };
    Ok(RunOutput {
        records,
        final_weights: clients.iter().map(|c| c.weights.clone()).collect(),
        aggregated,
        trajectory,
        shard_sizes: shards.iter().map(DatasetShard::sample_count).collect(),
        fine_tune_calls: calls,
    })
}

fn local_updates(clients: &mut [ClientState], proto: &crate::federation::ProtocolConfig) -> Result<(), ExperimentError> {
    clients
        .par_iter_mut()
        .try_for_each(|c| c.local_update(proto))
        .map_err(ExperimentError::from)
}

fn record_clients(
    rec: &mut Recorder<'_>,
    clients: &[ClientState],
    cfg: &ExperimentConfig,
    bytes: u64,
) -> Result<(), ExperimentError> {
    let aggregated = aggregate_all_clients(clients, cfg.aggregate)?;
    let ws: Vec<&ModelWeights> = clients.iter().map(|c| &c.weights).collect();
    rec.record(&ws, &aggregated, bytes)
}
