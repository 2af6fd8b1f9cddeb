//! Metrics and weights files.
//!
//! Reals are written as `{:.16e}` (17 significant digits), which parses
//! back to the identical `f64`. Wall-clock time is kept out of the metrics
//! files so that reruns produce identical bytes; it goes to a separate
//! timings file.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, MetricsRecord};
use crate::model::ModelWeights;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BTWT";
pub const WEIGHTS_FORMAT_VERSION: u8 = 1;

const FIXED_COLUMNS: [&str; 4] = ["round_index", "avg_client_dice", "aggregated_model_dice", "bytes_transferred"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    Csv,
    Json,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn emit_metrics(records: &[MetricsRecord], path: &Path, format: MetricsFormat) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    match format {
        MetricsFormat::Csv => write_metrics_csv(records, &mut out)?,
        MetricsFormat::Json => write_metrics_json(records, &mut out).map_err(io_err(path))?,
    }
    out.flush().map_err(io_err(path))
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<(), ExperimentError> {
    let n_clients = records.first().map_or(0, |r| r.per_client_dice.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend((0..n_clients).map(|i| format!("client_{i}")));
    w.write_record(&header)?;
    for r in records {
        if r.per_client_dice.len() != n_clients {
            return Err(ExperimentError::Format("records disagree on the number of clients".into()));
        }
        let mut row = vec![
            r.round_index.to_string(),
            real(r.avg_client_dice),
            real(r.aggregated_model_dice),
            r.bytes_transferred.to_string(),
        ];
        row.extend(r.per_client_dice.iter().map(|&d| real(d)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ExperimentError::Csv(e.into()))
}

pub fn write_metrics_json<W: Write>(records: &[MetricsRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "[")?;
    for (k, r) in records.iter().enumerate() {
        let clients: Vec<String> = r.per_client_dice.iter().map(|&d| real(d)).collect();
        write!(
            out,
            "  {{\"round_index\": {}, \"avg_client_dice\": {}, \"aggregated_model_dice\": {}, \"bytes_transferred\": {}, \"per_client_dice\": [{}]}}",
            r.round_index,
            real(r.avg_client_dice),
            real(r.aggregated_model_dice),
            r.bytes_transferred,
            clients.join(", ")
        )?;
        writeln!(out, "{}", if k + 1 < records.len() { "," } else { "" })?;
    }
    writeln!(out, "]")
}

/// Reads a file written by [`write_metrics_csv`]. `wall_time_ms` is zero.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>, ExperimentError> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    if header.iter().take(FIXED_COLUMNS.len()).ne(FIXED_COLUMNS) {
        return Err(ExperimentError::Format(format!("{}: unexpected header", path.display())));
    }
    let bad = |what: &str| ExperimentError::Format(format!("{}: bad {what}", path.display()));
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row?;
        let num = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok());
        records.push(MetricsRecord {
            round_index: row[0].parse().map_err(|_| bad("round_index"))?,
            avg_client_dice: num(1).ok_or_else(|| bad("avg_client_dice"))?,
            aggregated_model_dice: num(2).ok_or_else(|| bad("aggregated_model_dice"))?,
            bytes_transferred: row[3].parse().map_err(|_| bad("bytes_transferred"))?,
            per_client_dice: (FIXED_COLUMNS.len()..row.len())
                .map(|i| num(i).ok_or_else(|| bad("client dice")))
                .collect::<Result<_, _>>()?,
            wall_time_ms: 0,
        });
    }
    Ok(records)
}

pub fn emit_timings(records: &[MetricsRecord], path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round_index", "wall_time_ms"])?;
    for r in records {
        w.write_record([r.round_index.to_string(), r.wall_time_ms.to_string()])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_weights<W: Write>(weights: &ModelWeights, mut out: W) -> std::io::Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&[WEIGHTS_FORMAT_VERSION])?;
    out.write_all(&weights.spec_fingerprint.to_le_bytes())?;
    out.write_all(&(weights.params.len() as u64).to_le_bytes())?;
    for p in &weights.params {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_weights<R: Read>(mut input: R) -> Result<ModelWeights, ExperimentError> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|source| ExperimentError::Io {
            path: "weights".into(),
            source,
        })?;
    let bad = |msg: &str| ExperimentError::Format(format!("weights file: {msg}"));
    if bytes.len() < 21 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(bad("missing header"));
    }
    if bytes[4] != WEIGHTS_FORMAT_VERSION {
        return Err(bad("unsupported version"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let spec_fingerprint = word(5);
    let count = word(13) as usize;
    if count.checked_mul(8).and_then(|b| b.checked_add(21)) != Some(bytes.len()) {
        return Err(bad("length does not match parameter count"));
    }
    let params = bytes[21..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ModelWeights {
        spec_fingerprint,
        params,
    })
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<(), ExperimentError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write_weights(weights, &mut out).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights, ExperimentError> {
    read_weights(File::open(path).map_err(io_err(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: u64) -> MetricsRecord {
        MetricsRecord {
            round_index: k,
            per_client_dice: vec![0.1 * k as f64, 1.0 / 3.0],
            avg_client_dice: 0.7,
            aggregated_model_dice: f64::MIN_POSITIVE,
            bytes_transferred: 100 * k,
            wall_time_ms: 9,
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_metrics_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round_index,avg_client_dice,aggregated_model_dice,bytes_transferred\n");
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records: Vec<_> = (1..=3).map(record).collect();
        emit_metrics(&records, &path, MetricsFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), records.len() + 1);
        let back = read_metrics_csv(&path).unwrap();
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(MetricsRecord { wall_time_ms: 0, ..a.clone() }, *b);
        }
    }

    #[test]
    fn json_parses_with_a_generic_parser() {
        let records: Vec<_> = (1..=2).map(record).collect();
        let mut buf = Vec::new();
        write_metrics_json(&records, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
        assert_eq!(v[1]["per_client_dice"][1].as_f64().unwrap(), 1.0 / 3.0);
        assert_eq!(v[0]["aggregated_model_dice"].as_f64().unwrap(), f64::MIN_POSITIVE);
        let mut empty = Vec::new();
        write_metrics_json(&[], &mut empty).unwrap();
        assert_eq!(serde_json::from_slice::<serde_json::Value>(&empty).unwrap(), serde_json::json!([]));
    }

    #[test]
    fn weights_round_trip_and_reject_truncation() {
        let w = ModelWeights {
            spec_fingerprint: 0xfeed,
            params: vec![-0.0, 1.5, f64::MAX],
        };
        let mut buf = Vec::new();
        write_weights(&w, &mut buf).unwrap();
        assert!(read_weights(buf.as_slice()).unwrap().bitwise_eq(&w));
        assert!(read_weights(&buf[..buf.len() - 1]).is_err());
        assert!(read_weights(&b"XXXX"[..]).is_err());
    }
}
