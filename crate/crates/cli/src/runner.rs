//! Runs the experiment grid: strategies × train modes × attacks × trials.

use std::fs::File;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use ticket_core::{load_split, run_strategy_with, Checkpoint, DataSplit};

use crate::config::{Cell, CheckpointPolicy, ExperimentConfig};
use crate::error::CliError;
use crate::records::{EarlyStopRow, MetricsRow, TrialKey, EARLY_STOP_FILE, METRICS_FILE};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const STATUS_FILE: &str = "status.csv";

#[derive(Debug, Clone)]
pub struct TrialFailure {
    pub cell: Cell,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub total: usize,
    pub failures: Vec<TrialFailure>,
}

impl RunSummary {
    /// `Ok` only when every grid run succeeded.
    pub fn into_result(self) -> Result<RunSummary, CliError> {
        match self.failures.len() {
            0 => Ok(self),
            n if n == self.total => Err(CliError::AllFailed {
                total: n,
                first: self.failures[0].message.clone(),
            }),
            n => Err(CliError::Partial {
                failed: n,
                total: self.total,
            }),
        }
    }
}

#[derive(Serialize)]
struct StatusRow<'a> {
    cell: String,
    trial: usize,
    seed: u64,
    status: &'a str,
    message: &'a str,
}

pub fn trial_dir(output_dir: &Path, cell: &Cell, trial: usize) -> PathBuf {
    output_dir
        .join("cells")
        .join(cell.dir_name())
        .join(format!("trial_{trial}"))
}

/// Loads the dataset named by `cfg` and runs the whole grid.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let split = load_split(&cfg.data_dir, &cfg.dataset, cfg.train.validation_size, cfg.split_seed())?;
    info!(
        "{}: {} train / {} validation / {} test",
        cfg.dataset,
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    run_experiment_on(cfg, &split, jobs)
}

/// Runs the grid on an already loaded split. A failing run does not stop the others.
pub fn run_experiment_on(cfg: &ExperimentConfig, split: &DataSplit, jobs: usize) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let hash = cfg.hash();
    let resolved = format!("# config_hash = \"{hash}\"\n{}", cfg.to_toml());
    let resolved_path = out.join(RESOLVED_CONFIG_FILE);
    std::fs::write(&resolved_path, resolved).map_err(|e| CliError::io(&resolved_path, e))?;

    let tasks: Vec<(Cell, usize)> = cfg
        .cells()?
        .into_iter()
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();

    let run_one = |&(cell, trial): &(Cell, usize)| {
        let result = catch_unwind(AssertUnwindSafe(|| run_trial(cfg, split, &cell, trial, &hash)))
            .unwrap_or_else(|p| Err(CliError::Empty(format!("panic: {}", panic_message(&p)))));
        if let Err(e) = &result {
            warn!("{} trial {trial} failed: {e}", cell.dir_name());
        }
        result.err().map(|e| TrialFailure {
            cell,
            trial,
            message: e.to_string(),
        })
    };

    let outcomes: Vec<Option<TrialFailure>> = if jobs <= 1 {
        tasks.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(run_one).collect())
    };

    let status_path = out.join(STATUS_FILE);
    let mut status = csv::Writer::from_path(&status_path).map_err(|e| CliError::csv(&status_path, e))?;
    for ((cell, trial), outcome) in tasks.iter().zip(&outcomes) {
        let (state, message) = match outcome {
            None => ("ok", ""),
            Some(f) => ("failed", f.message.as_str()),
        };
        status
            .serialize(StatusRow {
                cell: cell.dir_name(),
                trial: *trial,
                seed: cfg.trial_seed(*trial),
                status: state,
                message,
            })
            .map_err(|e| CliError::csv(&status_path, e))?;
    }
    status.flush().map_err(|e| CliError::io(&status_path, e))?;

    Ok(RunSummary {
        output_dir: out.clone(),
        config_hash: hash,
        total: tasks.len(),
        failures: outcomes.into_iter().flatten().collect(),
    })
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown".into())
}

fn csv_to_core(e: csv::Error) -> ticket_core::Error {
    ticket_core::Error::Io {
        path: PathBuf::new(),
        source: std::io::Error::other(e),
    }
}

fn run_trial(cfg: &ExperimentConfig, split: &DataSplit, cell: &Cell, trial: usize, hash: &str) -> Result<(), CliError> {
    let tc = cfg.train_config(cell, trial)?;
    let dir = trial_dir(&cfg.output_dir, cell, trial);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let key = TrialKey {
        dataset: cfg.dataset.clone(),
        strategy: cell.strategy.to_string(),
        train_mode: cell.train_mode.as_str().into(),
        attack: cell.attack.to_string(),
        trial,
        seed: tc.seed,
        config_hash: hash.into(),
    };

    let info_path = dir.join("trial.toml");
    let mut f = File::create(&info_path).map_err(|e| CliError::io(&info_path, e))?;
    writeln!(
        f,
        "cell = \"{}\"\ntrial = {trial}\nseed = {}\nconfig_hash = \"{hash}\"",
        cell.dir_name(),
        tc.seed
    )
    .map_err(|e| CliError::io(&info_path, e))?;

    let metrics_path = dir.join(METRICS_FILE);
    let early_path = dir.join(EARLY_STOP_FILE);
    let mut metrics = csv::Writer::from_path(&metrics_path).map_err(|e| CliError::csv(&metrics_path, e))?;
    let mut early = csv::Writer::from_path(&early_path).map_err(|e| CliError::csv(&early_path, e))?;
    let policy = cfg.checkpoint_policy()?;
    let last_round = tc.pruning_rounds - 1;
    let ckpt_dir = dir.join("checkpoints");

    info!("{} trial {trial} (seed {}) started", cell.dir_name(), tc.seed);
    run_strategy_with(&tc, split, |state| {
        let out = state.output;
        for rec in &out.records {
            for row in MetricsRow::from_record(&key, rec) {
                metrics.serialize(row).map_err(csv_to_core)?;
            }
        }
        for row in EarlyStopRow::from_result(&key, out.round, out.sparsity, &out.early_stop) {
            early.serialize(row).map_err(csv_to_core)?;
        }
        metrics.flush().map_err(|e| ticket_core::Error::io(&metrics_path, e))?;
        early.flush().map_err(|e| ticket_core::Error::io(&early_path, e))?;

        let save = match policy {
            CheckpointPolicy::All => true,
            CheckpointPolicy::Final => out.round == last_round,
            CheckpointPolicy::None => false,
        };
        if save {
            std::fs::create_dir_all(&ckpt_dir).map_err(|e| ticket_core::Error::io(&ckpt_dir, e))?;
            let ckpt = Checkpoint {
                seed: tc.seed,
                round: out.round as u32,
                network: state.end.clone(),
            };
            ckpt.save(ckpt_dir.join(checkpoint_name(out.round)))?;
        }
        let last = out.records.last().map(|r| r.test);
        info!(
            "{} trial {trial} round {} (P_m {:.1}%): test natural {:.4} adversarial {:.4}",
            cell.dir_name(),
            out.round,
            100.0 * out.sparsity,
            last.map_or(f64::NAN, |m| m.natural_acc),
            last.map_or(f64::NAN, |m| m.adv_acc)
        );
        Ok(())
    })?;
    Ok(())
}

pub fn checkpoint_name(round: usize) -> String {
    format!("round_{round:02}.ckpt")
}
