//! Experiment orchestration for lottery-ticket robustness runs.
//!
//! `run` trains the grid and writes per-trial CSVs and checkpoints;
//! `aggregate`, `report`, `plot` and `histograms` only read those files.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod histogram;
pub mod plot;
pub mod records;
pub mod report;
pub mod runner;

use std::path::{Path, PathBuf};

use ticket_core::Checkpoint;

pub use aggregate::{aggregate_early_stop, aggregate_metrics, mean_std, AggregateRow};
pub use config::{Cell, ExperimentConfig, TrainMode};
pub use error::CliError;
pub use runner::{run_experiment, run_experiment_on, RunSummary};

/// Metric and early-stop aggregates of every trial below `run_dir`.
pub fn aggregate_run(run_dir: &Path) -> Result<(Vec<AggregateRow>, Vec<AggregateRow>), CliError> {
    let metrics = records::read_metrics_dir(run_dir)?;
    if metrics.is_empty() {
        return Err(CliError::Empty(format!(
            "{}: no {} files",
            run_dir.display(),
            records::METRICS_FILE
        )));
    }
    let early = records::read_early_stop_dir(run_dir)?;
    Ok((aggregate_metrics(&metrics)?, aggregate_early_stop(&early)?))
}

/// Writes both aggregate CSVs into `out_dir` and returns their paths.
pub fn write_aggregates(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (metrics, early) = aggregate_run(run_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let a = out_dir.join(aggregate::AGGREGATE_FILE);
    let b = out_dir.join(aggregate::EARLY_STOP_AGGREGATE_FILE);
    aggregate::write_aggregate(&a, &metrics)?;
    aggregate::write_aggregate(&b, &early)?;
    Ok(vec![a, b])
}

pub fn report_run(run_dir: &Path, iteration: usize) -> Result<String, CliError> {
    let (metrics, early) = aggregate_run(run_dir)?;
    Ok(report::render_report(&metrics, &early, iteration))
}

pub fn plot_run(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (metrics, early) = aggregate_run(run_dir)?;
    plot::render_plots(&metrics, &early, out_dir)
}

/// Histogram CSV next to each checkpoint (or in `out_dir`). `input` is a
/// checkpoint file or a directory searched recursively for `*.ckpt`.
pub fn export_histograms(input: &Path, bins: usize, out_dir: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    if bins == 0 {
        return Err(CliError::Config("bins must be >= 1".into()));
    }
    let checkpoints = if input.is_dir() {
        let mut found = Vec::new();
        collect_checkpoints(input, &mut found)?;
        found.sort();
        found
    } else {
        vec![input.to_path_buf()]
    };
    if checkpoints.is_empty() {
        return Err(CliError::Empty(format!("{}: no checkpoints", input.display())));
    }
    let mut written = Vec::new();
    for ckpt_path in checkpoints {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let hists = histogram::weight_histograms(&ckpt, bins);
        let dest = match out_dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
                let rel = ckpt_path.strip_prefix(input).unwrap_or(&ckpt_path);
                let flat = rel.to_string_lossy().replace(['/', '\\'], "__");
                let flat = if flat.is_empty() {
                    ckpt_path.file_name().unwrap_or_default().to_string_lossy().into_owned()
                } else {
                    flat
                };
                d.join(flat).with_extension("hist.csv")
            }
            None => ckpt_path.with_extension("hist.csv"),
        };
        histogram::write_histograms(&dest, ckpt.round, &hists)?;
        written.push(dest);
    }
    Ok(written)
}

fn collect_checkpoints(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_checkpoints(&path, found)?;
        } else if path.extension().is_some_and(|e| e == "ckpt") {
            found.push(path);
        }
    }
    Ok(())
}
