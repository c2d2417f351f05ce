//! Per-epoch training metrics and their CSV serialization.

use std::io::Write;
use std::path::Path;

use crate::engine::CounterSnapshot;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "epoch,train_loss,test_loss,train_acc,test_acc,cum_mults,cum_rotations,min_level";

/// One row of the metrics file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub cum_mults: u64,
    pub cum_rotations: u64,
    pub min_level: u32,
}

impl EpochRecord {
    fn to_csv_row(self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.test_loss,
            self.train_acc,
            self.test_acc,
            self.cum_mults,
            self.cum_rotations,
            self.min_level
        )
    }
}

/// Outcome of a training run: the epoch series plus run totals.
#[derive(Clone, Debug)]
pub struct TrainingMetrics {
    pub epochs: Vec<EpochRecord>,
    pub totals: CounterSnapshot,
    pub min_level: u32,
}

impl TrainingMetrics {
    pub fn new(epochs: Vec<EpochRecord>, totals: CounterSnapshot, min_level: u32) -> Self {
        Self {
            epochs,
            totals,
            min_level,
        }
    }

    pub fn final_train_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |r| r.train_acc)
    }

    pub fn final_test_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |r| r.test_acc)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for rec in &self.epochs {
            out.push_str(&rec.to_csv_row());
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Parse a metrics file written by [`TrainingMetrics::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => return Err(Error::Data(format!("unexpected metrics header: {other:?}"))),
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Data(format!(
                "metrics line {}: expected 8 fields, found {}",
                idx + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Data(format!("metrics line {}: {e}", idx + 2)))
        };
        records.push(EpochRecord {
            epoch: fields[0]
                .parse()
                .map_err(|e| Error::Data(format!("metrics line {}: {e}", idx + 2)))?,
            train_loss: parse_f(fields[1])?,
            test_loss: parse_f(fields[2])?,
            train_acc: parse_f(fields[3])?,
            test_acc: parse_f(fields[4])?,
            cum_mults: fields[5]
                .parse()
                .map_err(|e| Error::Data(format!("metrics line {}: {e}", idx + 2)))?,
            cum_rotations: fields[6]
                .parse()
                .map_err(|e| Error::Data(format!("metrics line {}: {e}", idx + 2)))?,
            min_level: fields[7]
                .parse()
                .map_err(|e| Error::Data(format!("metrics line {}: {e}", idx + 2)))?,
        });
    }
    Ok(records)
}
