//! The client-count sweep and the cohort-split experiment.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::run_to_dir;
use super::metrics::{io_err, real};
use super::{run_training, ExperimentConfig, ExperimentError, MetricsRecord, Mode, RunOutput, SplitConfig};

pub const SWEEP_CLIENT_COUNTS: [usize; 4] = [5, 7, 10, 20];
/// Client count of the per-client table.
pub const PER_CLIENT_TABLE_CLIENTS: usize = 10;
pub const COHORT_BOUNDARIES: [f64; 4] = [20.0, 30.0, 40.0, 50.0];
pub const COHORT_COUNTS: [usize; 5] = [5, 9, 2, 1, 3];

/// A small text table that renders both as CSV and as aligned text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ExperimentError::Format(e.to_string()))
    }

    pub fn render(&self) -> String {
        let short = |cell: &str| match cell.parse::<f64>() {
            Ok(x) if cell.contains('e') => format!("{x:.4}"),
            _ => cell.to_string(),
        };
        let cells: Vec<Vec<String>> = std::iter::once(&self.header)
            .chain(&self.rows)
            .map(|r| r.iter().map(|c| short(c)).collect())
            .collect();
        let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..cols)
            .map(|c| cells.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        fs::write(path, self.to_csv()?).map_err(io_err(path))
    }
}

fn last(records: &[MetricsRecord]) -> Result<&MetricsRecord, ExperimentError> {
    records
        .last()
        .ok_or_else(|| ExperimentError::Format("run produced no records".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub mode: Mode,
    pub n_clients: usize,
    pub output: RunOutput,
}

impl SweepRun {
    pub fn name(&self) -> String {
        format!("{}_{}", self.mode.as_str(), self.n_clients)
    }

    pub fn final_record(&self) -> &MetricsRecord {
        self.output.records.last().expect("completed runs have records")
    }
}

fn run_jobs(jobs: Vec<ExperimentConfig>, out: Option<&Path>) -> Result<Vec<SweepRun>, ExperimentError> {
    jobs.into_par_iter()
        .map(|cfg| {
            let output = match out {
                Some(dir) => {
                    let name = format!("{}_{}", cfg.mode.as_str(), cfg.n_clients);
                    run_to_dir(&cfg, &dir.join("runs").join(name))?.1
                }
                None => run_training(&cfg).map_err(|f| f.error)?,
            };
            last(&output.records)?;
            Ok(SweepRun {
                mode: cfg.mode,
                n_clients: cfg.n_clients,
                output,
            })
        })
        .collect()
}

fn find(runs: &[SweepRun], mode: Mode, n: usize) -> &SweepRun {
    runs.iter()
        .find(|r| r.mode == mode && r.n_clients == n)
        .expect("every sweep point was scheduled")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment1 {
    pub runs: Vec<SweepRun>,
    /// Rows per client count: FLS avg, BT avg, FLS aggregated, BT aggregated.
    pub summary: Table,
    /// Per-client Dice of the 10-client FLS, BrainTorrent and only-client runs.
    pub per_client: Table,
    pub pooled_dice: f64,
}

/// Sweeps the client count over FLS and BrainTorrent and adds the pooled and
/// only-client baselines. Writes `table1.csv`, `table2.csv` and one run
/// directory per sweep point when `out` is given.
pub fn run_experiment1(base: &ExperimentConfig, out: Option<&Path>) -> Result<Experiment1, ExperimentError> {
    let with = |mode: Mode, n_clients: usize| ExperimentConfig {
        mode,
        n_clients,
        split: SplitConfig::Uniform,
        ..base.clone()
    };
    let mut jobs = Vec::new();
    for n in SWEEP_CLIENT_COUNTS {
        jobs.push(with(Mode::Fls, n));
        jobs.push(with(Mode::Braintorrent, n));
    }
    jobs.push(with(Mode::OnlyClient, PER_CLIENT_TABLE_CLIENTS));
    jobs.push(with(Mode::Pooled, 1));
    let runs = run_jobs(jobs, out)?;

    let mut summary = Table {
        header: ["clients", "fls_avg_dice", "bt_avg_dice", "fls_aggregated_dice", "bt_aggregated_dice"]
            .map(String::from)
            .to_vec(),
        rows: Vec::new(),
    };
    for n in SWEEP_CLIENT_COUNTS {
        let fls = find(&runs, Mode::Fls, n).final_record();
        let bt = find(&runs, Mode::Braintorrent, n).final_record();
        summary.rows.push(vec![
            n.to_string(),
            real(fls.avg_client_dice),
            real(bt.avg_client_dice),
            real(fls.aggregated_model_dice),
            real(bt.aggregated_model_dice),
        ]);
    }
    let pooled_dice = find(&runs, Mode::Pooled, 1).final_record().aggregated_model_dice;
    summary
        .rows
        .push(vec!["pooled".into(), real(pooled_dice), String::new(), String::new(), String::new()]);

    let n = PER_CLIENT_TABLE_CLIENTS;
    let mut header = vec!["method".to_string()];
    header.extend((1..=n).map(|i| format!("c{i}")));
    header.push("mean".into());
    let mut per_client = Table { header, rows: Vec::new() };
    for (label, mode) in [("fls", Mode::Fls), ("braintorrent", Mode::Braintorrent), ("only_client", Mode::OnlyClient)] {
        let rec = find(&runs, mode, n).final_record();
        let mut row = vec![label.to_string()];
        row.extend(rec.per_client_dice.iter().map(|&d| real(d)));
        row.push(real(rec.avg_client_dice));
        per_client.rows.push(row);
    }

    if let Some(dir) = out {
        summary.write(&dir.join("table1.csv"))?;
        per_client.write(&dir.join("table2.csv"))?;
    }
    Ok(Experiment1 {
        runs,
        summary,
        per_client,
        pooled_dice,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment2 {
    pub runs: Vec<SweepRun>,
    pub shard_sizes: Vec<usize>,
    /// Rows BrainTorrent, FLS, pooled: per-client Dice, average, aggregated.
    pub table: Table,
    /// BrainTorrent average client Dice minus FLS average client Dice.
    pub bt_minus_fls: f64,
}

/// The base config with the five-bucket cohort split.
pub fn cohort_config(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        n_clients: COHORT_COUNTS.len(),
        split: SplitConfig::Cohort {
            boundaries: COHORT_BOUNDARIES.to_vec(),
            counts: COHORT_COUNTS.to_vec(),
        },
        ..base.clone()
    }
}

/// FLS, BrainTorrent and pooled training on cohort shards. Writes
/// `table4.csv` and the run directories when `out` is given.
pub fn run_experiment2(base: &ExperimentConfig, out: Option<&Path>) -> Result<Experiment2, ExperimentError> {
    let cohort = cohort_config(base);
    let with = |mode: Mode| ExperimentConfig { mode, ..cohort.clone() };
    let runs = run_jobs(vec![with(Mode::Braintorrent), with(Mode::Fls), with(Mode::Pooled)], out)?;
    let n = cohort.n_clients;

    let mut header = vec!["method".to_string()];
    header.extend((1..=n).map(|i| format!("c{i}")));
    header.extend(["avg".to_string(), "aggregated".to_string()]);
    let mut table = Table { header, rows: Vec::new() };
    for (label, mode) in [("braintorrent", Mode::Braintorrent), ("fls", Mode::Fls)] {
        let rec = find(&runs, mode, n).final_record();
        let mut row = vec![label.to_string()];
        row.extend(rec.per_client_dice.iter().map(|&d| real(d)));
        row.extend([real(rec.avg_client_dice), real(rec.aggregated_model_dice)]);
        table.rows.push(row);
    }
    let pooled = find(&runs, Mode::Pooled, n).final_record().aggregated_model_dice;
    let mut row = vec!["pooled".to_string()];
    row.extend(std::iter::repeat_n(String::new(), n));
    row.extend([real(pooled), real(pooled)]);
    table.rows.push(row);

    let bt_minus_fls = find(&runs, Mode::Braintorrent, n).final_record().avg_client_dice
        - find(&runs, Mode::Fls, n).final_record().avg_client_dice;
    let shard_sizes = find(&runs, Mode::Fls, n).output.shard_sizes.clone();
    if let Some(dir) = out {
        table.write(&dir.join("table4.csv"))?;
    }
    Ok(Experiment2 {
        runs,
        shard_sizes,
        table,
        bt_minus_fls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_renders_and_writes_csv() {
        let t = Table {
            header: vec!["a".into(), "b".into()],
            rows: vec![vec!["x".into(), real(0.5)]],
        };
        assert_eq!(t.to_csv().unwrap(), "a,b\nx,5.0000000000000000e-1\n");
        assert_eq!(t.render(), "a       b\nx  0.5000\n");
    }
}
