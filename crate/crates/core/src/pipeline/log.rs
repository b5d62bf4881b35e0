use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;

/// One line of the training log. Epoch 0 is the evaluation before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub valid_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub valid_perplexity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub valid_macro_f1: Option<f64>,
    pub wall_ms: u64,
}

/// Append-only; at most one record per (stage, epoch).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn push(&mut self, rec: EpochRecord) -> Result<(), PipelineError> {
        if self.records.iter().any(|r| r.stage == rec.stage && r.epoch == rec.epoch) {
            return Err(PipelineError::Input(format!("duplicate log record for {} epoch {}", rec.stage, rec.epoch)));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn extend(&mut self, recs: impl IntoIterator<Item = EpochRecord>) -> Result<(), PipelineError> {
        recs.into_iter().try_for_each(|r| self.push(r))
    }

    pub fn stage(&self, stage: &str) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.stage == stage).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }

    /// Appends this log's records to `path`.
    pub fn append_to(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let mut log = Self::new();
        for (i, line) in fs::read_to_string(path)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec = serde_json::from_str(line).map_err(|e| PipelineError::Input(format!("log line {}: {e}", i + 1)))?;
            log.push(rec)?;
        }
        Ok(log)
    }
}
