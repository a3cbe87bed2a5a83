//! Run records: the exact config, model, metrics, and summary of one run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arbitration::ArbitrationState;
use crate::config::ExperimentConfig;
use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::rng;

/// One named metric table; written out as `<name>.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricTrace {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        MetricTrace {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Deterministic CSV text: header, then shortest-round-trip f64 cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for cell in row {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format!("{cell}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub rng_algorithm: String,
    pub config: ExperimentConfig,
    /// Resolved device model actually used; None for float64 runs.
    pub model: Option<DeviceModel>,
    /// Final arbitration state(s); one entry per shard, empty when the run
    /// uses no devices.
    pub arbitration: Vec<ArbitrationState>,
    pub metrics: Vec<MetricTrace>,
    /// Experiment-specific summary figures (accuracies, thresholds, ...).
    pub summary: serde_json::Value,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn new(config: ExperimentConfig, model: Option<DeviceModel>) -> Self {
        RunRecord {
            tool: "memsyn".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: rng::ALGORITHM.to_string(),
            config,
            model,
            arbitration: Vec::new(),
            metrics: Vec::new(),
            summary: serde_json::Value::Null,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn trace(&self, name: &str) -> Option<&MetricTrace> {
        self.metrics.iter().find(|t| t.name == name)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CharacterizeConfig;

    #[test]
    fn csv_is_deterministic_and_plain() {
        let mut t = MetricTrace::new("acc", &["example_index", "test_accuracy"]);
        t.push(vec![1000.0, 0.9715]);
        t.push(vec![2000.0, 0.9725]);
        assert_eq!(
            t.to_csv(),
            "example_index,test_accuracy\n1000,0.9715\n2000,0.9725\n"
        );
        assert_eq!(t.file_name(), "acc.csv");
    }

    #[test]
    fn record_round_trips() {
        let mut rec = RunRecord::new(
            ExperimentConfig::Characterize(CharacterizeConfig::default()),
            None,
        );
        let mut t = MetricTrace::new("characterize", &["pulse_index", "mean_uS", "std_uS"]);
        t.push(vec![0.0, 0.1, 0.0]);
        rec.metrics.push(t);
        rec.summary = serde_json::json!({"rows": 1});
        rec.wall_clock_seconds = 0.25;
        let text = rec.to_json_pretty().unwrap();
        let back = RunRecord::from_json(&text).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.rng_algorithm, rng::ALGORITHM);
        assert!(back.trace("characterize").is_some());
    }
}
