//! Row types of the metrics and early-stop CSVs, and their readers.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ticket_core::{EarlyStopResult, EvalRecord, SplitMetrics};

use crate::error::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EARLY_STOP_FILE: &str = "early_stop.csv";

pub const METRICS_COLUMNS: [&str; 15] = [
    "dataset",
    "strategy",
    "train_mode",
    "attack",
    "trial",
    "round",
    "sparsity_pct",
    "iteration",
    "split",
    "natural_loss",
    "natural_acc",
    "adv_loss",
    "adv_acc",
    "seed",
    "config_hash",
];

pub const EARLY_STOP_COLUMNS: [&str; 16] = [
    "dataset",
    "strategy",
    "train_mode",
    "attack",
    "trial",
    "round",
    "sparsity_pct",
    "early_stop_iteration",
    "validation_loss",
    "split",
    "natural_loss",
    "natural_acc",
    "adv_loss",
    "adv_acc",
    "seed",
    "config_hash",
];

/// Labels shared by every row of one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialKey {
    pub dataset: String,
    pub strategy: String,
    pub train_mode: String,
    pub attack: String,
    pub trial: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub strategy: String,
    pub train_mode: String,
    pub attack: String,
    pub trial: usize,
    pub round: usize,
    pub sparsity_pct: f64,
    pub iteration: usize,
    pub split: String,
    pub natural_loss: f64,
    pub natural_acc: f64,
    pub adv_loss: f64,
    pub adv_acc: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopRow {
    pub dataset: String,
    pub strategy: String,
    pub train_mode: String,
    pub attack: String,
    pub trial: usize,
    pub round: usize,
    pub sparsity_pct: f64,
    pub early_stop_iteration: usize,
    pub validation_loss: f64,
    pub split: String,
    pub natural_loss: f64,
    pub natural_acc: f64,
    pub adv_loss: f64,
    pub adv_acc: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// The four per-split metric columns, in CSV order.
pub const METRIC_NAMES: [&str; 4] = ["natural_loss", "natural_acc", "adv_loss", "adv_acc"];

fn metric_values(m: &SplitMetrics) -> [f64; 4] {
    [m.natural_loss, m.natural_acc, m.adv_loss, m.adv_acc]
}

impl MetricsRow {
    /// Two rows (validation, test) for one evaluation record.
    pub fn from_record(key: &TrialKey, rec: &EvalRecord) -> [MetricsRow; 2] {
        let row = |split: &str, m: &SplitMetrics| MetricsRow {
            dataset: key.dataset.clone(),
            strategy: key.strategy.clone(),
            train_mode: key.train_mode.clone(),
            attack: key.attack.clone(),
            trial: key.trial,
            round: rec.round,
            sparsity_pct: 100.0 * rec.sparsity,
            iteration: rec.iteration,
            split: split.into(),
            natural_loss: m.natural_loss,
            natural_acc: m.natural_acc,
            adv_loss: m.adv_loss,
            adv_acc: m.adv_acc,
            seed: key.seed,
            config_hash: key.config_hash.clone(),
        };
        [row("validation", &rec.validation), row("test", &rec.test)]
    }

    pub fn metrics(&self) -> [f64; 4] {
        [self.natural_loss, self.natural_acc, self.adv_loss, self.adv_acc]
    }
}

impl EarlyStopRow {
    pub fn from_result(key: &TrialKey, round: usize, sparsity: f64, es: &EarlyStopResult) -> [EarlyStopRow; 2] {
        let row = |split: &str, m: &SplitMetrics| {
            let [natural_loss, natural_acc, adv_loss, adv_acc] = metric_values(m);
            EarlyStopRow {
                dataset: key.dataset.clone(),
                strategy: key.strategy.clone(),
                train_mode: key.train_mode.clone(),
                attack: key.attack.clone(),
                trial: key.trial,
                round,
                sparsity_pct: 100.0 * sparsity,
                early_stop_iteration: es.iteration,
                validation_loss: es.validation_loss,
                split: split.into(),
                natural_loss,
                natural_acc,
                adv_loss,
                adv_acc,
                seed: key.seed,
                config_hash: key.config_hash.clone(),
            }
        };
        [row("validation", &es.validation), row("test", &es.test)]
    }
}

/// Reads a CSV whose header must equal `columns` exactly.
pub fn read_rows<T: DeserializeOwned>(path: &Path, columns: &[&str]) -> Result<Vec<T>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::csv(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != columns {
        return Err(CliError::Schema {
            path: path.to_owned(),
            expected: columns.iter().map(|s| s.to_string()).collect(),
            found: header,
        });
    }
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::csv(path, e))
}

/// Every file named `name` below `root`, sorted by path.
pub fn find_files(root: &Path, name: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|f| f == name) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn read_metrics_dir(root: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut rows = Vec::new();
    for p in find_files(root, METRICS_FILE)? {
        rows.extend(read_rows::<MetricsRow>(&p, &METRICS_COLUMNS)?);
    }
    Ok(rows)
}

pub fn read_early_stop_dir(root: &Path) -> Result<Vec<EarlyStopRow>, CliError> {
    let mut rows = Vec::new();
    for p in find_files(root, EARLY_STOP_FILE)? {
        rows.extend(read_rows::<EarlyStopRow>(&p, &EARLY_STOP_COLUMNS)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> TrialKey {
        TrialKey {
            dataset: "digits".into(),
            strategy: "original".into(),
            train_mode: "natural".into(),
            attack: "fgsm".into(),
            trial: 1,
            seed: 8,
            config_hash: "abc".into(),
        }
    }

    fn metrics(v: f64) -> SplitMetrics {
        SplitMetrics {
            natural_loss: v,
            natural_acc: 0.1 + v,
            adv_loss: 0.2 + v,
            adv_acc: 1.0 / 3.0,
        }
    }

    #[test]
    fn header_matches_field_order() {
        let rec = EvalRecord {
            round: 2,
            iteration: 500,
            sparsity: 0.64,
            validation: metrics(0.5),
            test: metrics(0.25),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in MetricsRow::from_record(&key(), &rec) {
            w.serialize(r).unwrap();
        }
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));

        let es = EarlyStopResult {
            iteration: 500,
            validation_loss: 0.5,
            validation: metrics(0.5),
            test: metrics(0.25),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in EarlyStopRow::from_result(&key(), 2, 0.64, &es) {
            w.serialize(r).unwrap();
        }
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), EARLY_STOP_COLUMNS.join(","));
    }

    #[test]
    fn floats_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_FILE);
        let rec = EvalRecord {
            round: 0,
            iteration: 10,
            sparsity: 0.8 * 0.8,
            validation: metrics(0.1 + 0.2),
            test: metrics(1e-300),
        };
        let rows = MetricsRow::from_record(&key(), &rec);
        let mut w = csv::Writer::from_path(&path).unwrap();
        for r in &rows {
            w.serialize(r).unwrap();
        }
        w.flush().unwrap();
        let back: Vec<MetricsRow> = read_rows(&path, &METRICS_COLUMNS).unwrap();
        assert_eq!(back, rows.to_vec());
    }

    #[test]
    fn wrong_header_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "dataset,strategy\nd,s\n").unwrap();
        let err = read_rows::<MetricsRow>(&path, &METRICS_COLUMNS).unwrap_err();
        assert!(matches!(err, CliError::Schema { .. }));
    }
}
