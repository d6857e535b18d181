//! Line-delimited JSON metrics, one record per epoch or iteration.
//!
//! Every record carries the run's `config_hash`. Epoch records have fields
//! `config_hash, phase, epoch, loss, test_accuracy`; iteration records have
//! `config_hash` plus the fields of [`IterationMetrics`](crate::pruner::IterationMetrics).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::Phase;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub loss: f64,
    pub test_accuracy: f64,
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    config_hash: &'a str,
    #[serde(flatten)]
    record: &'a T,
}

/// Append-only writer; each record is flushed as soon as it is written.
pub struct MetricsWriter {
    out: BufWriter<File>,
    config_hash: String,
    rows: usize,
}

impl MetricsWriter {
    /// Creates (or truncates) `path`.
    pub fn create(path: &Path, config_hash: &str) -> Result<Self> {
        Ok(MetricsWriter {
            out: BufWriter::new(File::create(path)?),
            config_hash: config_hash.to_string(),
            rows: 0,
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(
            &mut self.out,
            &Tagged {
                config_hash: &self.config_hash,
                record,
            },
        )?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Reads every record of a metrics file. Unknown fields such as
/// `config_hash` are ignored unless `T` asks for them.
pub fn read_metrics<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_with_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut w = MetricsWriter::create(&p, "h1").unwrap();
        let recs = [
            EpochRecord { phase: Phase::Train, epoch: 1, loss: 0.1 + 0.2, test_accuracy: 0.5 },
            EpochRecord { phase: Phase::Retrain, epoch: 2, loss: 1e-300, test_accuracy: 1.0 },
        ];
        for r in &recs {
            w.write(r).unwrap();
        }
        assert_eq!(w.rows(), 2);
        drop(w);
        let back: Vec<EpochRecord> = read_metrics(&p).unwrap();
        assert_eq!(back, recs);
        let raw: Vec<serde_json::Value> = read_metrics(&p).unwrap();
        assert_eq!(raw[0]["config_hash"], "h1");
        assert_eq!(raw[1]["phase"], "retrain");
    }
}
