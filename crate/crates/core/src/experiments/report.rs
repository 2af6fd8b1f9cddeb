use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{RunManifest, RunStatus, MANIFEST_FILE, METRICS_CSV};
use super::metrics::{io_err, read_metrics_csv, real};
use super::sweep::Table;
use super::ExperimentError;

pub const REPORT_CSV: &str = "report.csv";
const SWEEP_TABLES: [&str; 3] = ["table1.csv", "table2.csv", "table4.csv"];

fn find_runs(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), ExperimentError> {
    if dir.join(MANIFEST_FILE).is_file() {
        found.push(dir.to_path_buf());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for sub in entries {
        find_runs(&sub, found)?;
    }
    Ok(())
}

fn read_table(path: &Path) -> Result<Table, ExperimentError> {
    let mut rd = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = rd.headers()?.iter().map(String::from).collect();
    let rows = rd
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok(Table { header, rows })
}

/// Summarises every run directory below `dir` and any sweep tables found
/// there. Also writes a long-format `report.csv` (one line per run and
/// evaluation point) into `dir` for plotting.
pub fn report(dir: &Path) -> Result<String, ExperimentError> {
    let mut runs = Vec::new();
    find_runs(dir, &mut runs)?;

    let mut summary = Table {
        header: ["run", "mode", "clients", "status", "rounds", "avg_client_dice", "aggregated_dice", "bytes"]
            .map(String::from)
            .to_vec(),
        rows: Vec::new(),
    };
    let mut long = csv::Writer::from_path(dir.join(REPORT_CSV))?;
    long.write_record(["run", "mode", "clients", "round_index", "avg_client_dice", "aggregated_model_dice", "bytes_transferred"])?;
    for run in &runs {
        let manifest = RunManifest::load(&run.join(MANIFEST_FILE))?;
        let records = read_metrics_csv(&run.join(METRICS_CSV))?;
        let name = run.strip_prefix(dir).unwrap_or(run).display().to_string();
        let name = if name.is_empty() { ".".to_string() } else { name };
        let mode = manifest.config.mode.as_str();
        let clients = manifest.shard_sizes.len().to_string();
        for r in &records {
            long.write_record([
                name.clone(),
                mode.to_string(),
                clients.clone(),
                r.round_index.to_string(),
                real(r.avg_client_dice),
                real(r.aggregated_model_dice),
                r.bytes_transferred.to_string(),
            ])?;
        }
        let status = match manifest.status {
            RunStatus::Completed => "ok",
            RunStatus::Failed => "FAILED",
        };
        let (avg, agg, bytes) = records.last().map_or((String::new(), String::new(), String::new()), |r| {
            (real(r.avg_client_dice), real(r.aggregated_model_dice), r.bytes_transferred.to_string())
        });
        summary.rows.push(vec![
            name,
            mode.to_string(),
            clients,
            status.to_string(),
            records.len().to_string(),
            avg,
            agg,
            bytes,
        ]);
    }
    long.flush().map_err(io_err(dir))?;

    let mut text = format!("{} run(s) under {}\n\n", runs.len(), dir.display());
    text.push_str(&summary.render());
    for name in SWEEP_TABLES {
        let path = dir.join(name);
        if path.is_file() {
            text.push_str(&format!("\n{name}\n"));
            text.push_str(&read_table(&path)?.render());
        }
    }
    Ok(text)
}
