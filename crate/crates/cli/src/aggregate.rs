//! Mean and sample standard deviation over trials.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::records::{EarlyStopRow, MetricsRow, METRIC_NAMES};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const EARLY_STOP_AGGREGATE_FILE: &str = "early_stop_aggregate.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub strategy: String,
    pub train_mode: String,
    pub attack: String,
    pub round: usize,
    pub sparsity_pct: f64,
    /// Empty for early-stop aggregates.
    pub iteration: Option<usize>,
    pub split: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 when n = 1.
    pub std: f64,
    pub n: usize,
}

/// Sample mean and standard deviation.
///
/// Values are sorted before summing, so the result does not depend on
/// trial order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "mean_std of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    (mean, (sq.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

type GroupKey = (String, String, String, String, usize, Option<usize>, String);

struct Group {
    sparsity_pct: f64,
    trials: BTreeSet<usize>,
    hashes: BTreeSet<String>,
    values: Vec<Vec<f64>>,
}

fn collect<'a>(
    rows: impl Iterator<Item = (GroupKey, f64, usize, &'a str, Vec<f64>)>,
    metric_count: usize,
) -> Result<BTreeMap<GroupKey, Group>, CliError> {
    let mut groups: BTreeMap<GroupKey, Group> = BTreeMap::new();
    for (key, sparsity_pct, trial, hash, values) in rows {
        let g = groups.entry(key.clone()).or_insert_with(|| Group {
            sparsity_pct,
            trials: BTreeSet::new(),
            hashes: BTreeSet::new(),
            values: vec![Vec::new(); metric_count],
        });
        if !g.trials.insert(trial) {
            return Err(CliError::Mismatch(format!("duplicate trial {trial} for {key:?}")));
        }
        g.hashes.insert(hash.to_owned());
        if g.hashes.len() > 1 {
            return Err(CliError::Mismatch(format!(
                "rows for {key:?} come from different configs: {:?}",
                g.hashes
            )));
        }
        if g.sparsity_pct != sparsity_pct {
            return Err(CliError::Mismatch(format!(
                "sparsity differs across trials for {key:?}: {} vs {sparsity_pct}",
                g.sparsity_pct
            )));
        }
        for (acc, v) in g.values.iter_mut().zip(values) {
            acc.push(v);
        }
    }
    Ok(groups)
}

fn emit(groups: BTreeMap<GroupKey, Group>, names: &[&str]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for ((dataset, strategy, train_mode, attack, round, iteration, split), g) in groups {
        for (name, values) in names.iter().zip(&g.values) {
            let (mean, std) = mean_std(values);
            out.push(AggregateRow {
                dataset: dataset.clone(),
                strategy: strategy.clone(),
                train_mode: train_mode.clone(),
                attack: attack.clone(),
                round,
                sparsity_pct: g.sparsity_pct,
                iteration,
                split: split.clone(),
                metric: (*name).into(),
                mean,
                std,
                n: values.len(),
            });
        }
    }
    out
}

/// One row per (cell, round, iteration, split, metric).
pub fn aggregate_metrics(rows: &[MetricsRow]) -> Result<Vec<AggregateRow>, CliError> {
    let groups = collect(
        rows.iter().map(|r| {
            let key = (
                r.dataset.clone(),
                r.strategy.clone(),
                r.train_mode.clone(),
                r.attack.clone(),
                r.round,
                Some(r.iteration),
                r.split.clone(),
            );
            (
                key,
                r.sparsity_pct,
                r.trial,
                r.config_hash.as_str(),
                r.metrics().to_vec(),
            )
        }),
        METRIC_NAMES.len(),
    )?;
    Ok(emit(groups, &METRIC_NAMES))
}

pub const EARLY_STOP_METRICS: [&str; 6] = [
    "early_stop_iteration",
    "validation_loss",
    "natural_loss",
    "natural_acc",
    "adv_loss",
    "adv_acc",
];

/// One row per (cell, round, split, metric); `iteration` is empty.
pub fn aggregate_early_stop(rows: &[EarlyStopRow]) -> Result<Vec<AggregateRow>, CliError> {
    let groups = collect(
        rows.iter().map(|r| {
            let key = (
                r.dataset.clone(),
                r.strategy.clone(),
                r.train_mode.clone(),
                r.attack.clone(),
                r.round,
                None,
                r.split.clone(),
            );
            let values = vec![
                r.early_stop_iteration as f64,
                r.validation_loss,
                r.natural_loss,
                r.natural_acc,
                r.adv_loss,
                r.adv_acc,
            ];
            (key, r.sparsity_pct, r.trial, r.config_hash.as_str(), values)
        }),
        EARLY_STOP_METRICS.len(),
    )?;
    Ok(emit(groups, &EARLY_STOP_METRICS))
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize, acc: f64) -> MetricsRow {
        MetricsRow {
            dataset: "digits".into(),
            strategy: "original".into(),
            train_mode: "natural".into(),
            attack: "fgsm".into(),
            trial,
            round: 0,
            sparsity_pct: 100.0,
            iteration: 500,
            split: "test".into(),
            natural_loss: 0.1,
            natural_acc: acc,
            adv_loss: 2.0,
            adv_acc: 0.05,
            seed: trial as u64,
            config_hash: "h".into(),
        }
    }

    #[test]
    fn identical_values_have_zero_std() {
        assert_eq!(mean_std(&[0.7; 5]), (0.7, 0.0));
    }

    #[test]
    fn one_to_five() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert!((s - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((s - 1.5811).abs() < 1e-4);
    }

    #[test]
    fn single_trial_is_flagged_by_n() {
        let agg = aggregate_metrics(&[row(0, 0.9)]).unwrap();
        assert_eq!(agg.len(), 4);
        let acc = agg.iter().find(|a| a.metric == "natural_acc").unwrap();
        assert_eq!((acc.mean, acc.std, acc.n), (0.9, 0.0, 1));
    }

    #[test]
    fn groups_by_split_and_iteration() {
        let mut rows: Vec<MetricsRow> = (0..3).map(|t| row(t, 0.9 + t as f64 / 100.0)).collect();
        let mut other = row(0, 0.5);
        other.iteration = 1000;
        rows.push(other);
        let agg = aggregate_metrics(&rows).unwrap();
        assert_eq!(agg.len(), 8);
        let at500 = agg
            .iter()
            .find(|a| a.metric == "natural_acc" && a.iteration == Some(500))
            .unwrap();
        assert_eq!(at500.n, 3);
        assert!((at500.mean - 0.91).abs() < 1e-12);
    }

    #[test]
    fn mixed_configs_and_duplicates_are_rejected() {
        let mut b = row(1, 0.9);
        b.config_hash = "other".into();
        assert!(matches!(
            aggregate_metrics(&[row(0, 0.9), b]),
            Err(CliError::Mismatch(_))
        ));
        assert!(matches!(
            aggregate_metrics(&[row(0, 0.9), row(0, 0.8)]),
            Err(CliError::Mismatch(_))
        ));
    }
}
