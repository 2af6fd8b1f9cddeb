use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::metrics::{emit_metrics, emit_timings, io_err, save_weights, MetricsFormat};
use super::{prepare, run_training, ExperimentConfig, ExperimentError, MetricsRecord, RunOutput};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// Everything needed to redo a run, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub status: RunStatus,
    pub shard_sizes: Vec<usize>,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.config.validate()?;
        Ok(manifest)
    }

    fn save(&self, dir: &Path) -> Result<(), ExperimentError> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(io_err(&path))
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn write_metrics(records: &[MetricsRecord], dir: &Path, outputs: &mut Vec<String>) -> Result<(), ExperimentError> {
    emit_metrics(records, &dir.join(METRICS_CSV), MetricsFormat::Csv)?;
    emit_metrics(records, &dir.join(METRICS_JSON), MetricsFormat::Json)?;
    emit_timings(records, &dir.join(TIMINGS_CSV))?;
    outputs.extend([METRICS_CSV, METRICS_JSON, TIMINGS_CSV].map(String::from));
    Ok(())
}

pub(crate) fn weights_dir(dir: &Path) -> PathBuf {
    dir.join("weights")
}

pub(crate) fn client_weights_name(i: usize) -> String {
    format!("weights/client_{i}.btwt")
}

/// Runs `cfg` over the simulated network and writes config, manifest,
/// metrics, timings and final weights into `dir`. A failed run still
/// leaves its partial metrics, a manifest and a `FAILED` marker behind.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<(RunManifest, RunOutput), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config_path = dir.join("config.json");
    fs::write(&config_path, cfg.to_json() + "\n").map_err(io_err(&config_path))?;
    let started_at = now();
    let shard_sizes = prepare(cfg)?.shards.iter().map(|s| s.sample_count()).collect();
    let mut manifest = RunManifest {
        config: cfg.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: String::new(),
        status: RunStatus::Completed,
        shard_sizes,
        outputs: vec!["config.json".into()],
        error: None,
    };
    let _ = fs::remove_file(dir.join(FAILED_MARKER));

    match run_training(cfg) {
        Ok(output) => {
            write_metrics(&output.records, dir, &mut manifest.outputs)?;
            let wdir = weights_dir(dir);
            fs::create_dir_all(&wdir).map_err(io_err(&wdir))?;
            save_weights(&output.aggregated, &dir.join("weights/aggregated.btwt"))?;
            manifest.outputs.push("weights/aggregated.btwt".into());
            for (i, w) in output.final_weights.iter().enumerate() {
                let name = client_weights_name(i);
                save_weights(w, &dir.join(&name))?;
                manifest.outputs.push(name);
            }
            manifest.finished_at = now();
            manifest.outputs.push(MANIFEST_FILE.into());
            manifest.save(dir)?;
            info!("run written to {}", dir.display());
            Ok((manifest, output))
        }
        Err(failure) => {
            warn!("{failure}");
            write_metrics(&failure.records, dir, &mut manifest.outputs)?;
            let marker = dir.join(FAILED_MARKER);
            fs::write(&marker, format!("{}\n", failure.error)).map_err(io_err(&marker))?;
            manifest.outputs.push(FAILED_MARKER.into());
            manifest.status = RunStatus::Failed;
            manifest.error = Some(failure.error.to_string());
            manifest.finished_at = now();
            manifest.outputs.push(MANIFEST_FILE.into());
            manifest.save(dir)?;
            Err(failure.error)
        }
    }
}

/// Re-runs the config recorded in a manifest into a fresh directory.
pub fn rerun_manifest(manifest_path: &Path, dir: &Path) -> Result<(RunManifest, RunOutput), ExperimentError> {
    let manifest = RunManifest::load(manifest_path)?;
    run_to_dir(&manifest.config, dir)
}
