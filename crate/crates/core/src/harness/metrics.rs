//! Line-delimited JSON metrics records.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostLedger;
use crate::error::{Error, Result};

/// One evaluation point. The ledger fields are cumulative since round 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    /// Hash identifying the dataset, split and partition.
    pub task: String,
    pub round: u32,
    pub loss: f64,
    pub acc: f64,
    pub fw_flops: u64,
    pub perturb_flops: u64,
    pub update_flops: u64,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub peak_mem: u64,
    /// Seconds since the run started; the only nondeterministic field.
    pub wall_time: f64,
}

impl MetricsRecord {
    pub fn new(method: &str, task: &str, round: u32, loss: f64, acc: f64, ledger: &CostLedger, wall_time: f64) -> Self {
        Self {
            method: method.to_string(),
            task: task.to_string(),
            round,
            loss,
            acc,
            fw_flops: ledger.fw_flops,
            perturb_flops: ledger.perturb_flops,
            update_flops: ledger.update_flops,
            upload_bytes: ledger.upload_bytes,
            download_bytes: ledger.download_bytes,
            peak_mem: ledger.peak_memory_bytes,
            wall_time,
        }
    }

    pub fn ledger(&self) -> CostLedger {
        CostLedger {
            fw_flops: self.fw_flops,
            perturb_flops: self.perturb_flops,
            update_flops: self.update_flops,
            upload_bytes: self.upload_bytes,
            download_bytes: self.download_bytes,
            peak_memory_bytes: self.peak_mem,
        }
    }

    pub fn to_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Invariant(format!("cannot encode metrics record: {e}")))
    }
}

/// Appends records to a writer, one JSON object per line, flushing each.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", record.to_line()?)?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            detail: "no metrics records".into(),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_lines() {
        let ledger = CostLedger {
            fw_flops: 10,
            perturb_flops: 20,
            update_flops: 30,
            upload_bytes: 40,
            download_bytes: 50,
            peak_memory_bytes: 60,
        };
        let rec = MetricsRecord::new("fedspzo", "abc", 3, 0.5, 0.75, &ledger, 1.25);
        let line = rec.to_line().unwrap();
        for key in [
            "\"round\"", "\"loss\"", "\"acc\"", "\"fw_flops\"", "\"perturb_flops\"", "\"update_flops\"",
            "\"upload_bytes\"", "\"download_bytes\"", "\"peak_mem\"", "\"wall_time\"",
        ] {
            assert!(line.contains(key), "{key} missing from {line}");
        }
        let back: MetricsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.ledger(), ledger);
    }
}
