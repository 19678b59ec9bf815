//! Declarative experiment configuration (TOML) with `key=value` overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ticket_core::{AdamConfig, AttackConfig, AttackKind, PruneRates, PruneRounding, Strategy, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Subdirectory of `data_dir` holding the IDX files.
    pub dataset: String,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub strategies: Vec<String>,
    /// `natural` and/or `adversarial`.
    pub train_modes: Vec<String>,
    /// `fgsm` and/or `pgd`.
    pub attacks: Vec<String>,
    pub trials: usize,
    pub base_seed: u64,
    /// `all` (every round), `final` (last round only) or `none`.
    pub checkpoints: String,
    pub train: TrainSection,
    pub attack: AttackSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations_per_round: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub pruning_rounds: usize,
    /// Evaluate on the first n validation and test rows; 0 means all.
    pub eval_subset: usize,
    pub validation_size: usize,
    /// Seed for the validation split; defaults to `base_seed`.
    pub split_seed: Option<u64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub prune_rates: Vec<f64>,
    pub rounding: String,
    pub adversarial_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub eps: f64,
    pub pgd_alpha: f64,
    pub pgd_steps: usize,
    pub pgd_random_start: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "digits".into(),
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            strategies: vec!["original".into(), "random".into(), "continued".into()],
            train_modes: vec!["natural".into(), "adversarial".into()],
            attacks: vec!["fgsm".into(), "pgd".into()],
            trials: 5,
            base_seed: 0,
            checkpoints: "all".into(),
            train: TrainSection::default(),
            attack: AttackSection::default(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            iterations_per_round: t.iterations_per_round,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            pruning_rounds: t.pruning_rounds,
            eval_subset: 0,
            validation_size: 10_000,
            split_seed: None,
            learning_rate: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            prune_rates: t.prune_rates.as_slice().to_vec(),
            rounding: t.rounding.to_string(),
            adversarial_weight: t.adversarial_weight,
        }
    }
}

impl Default for AttackSection {
    fn default() -> Self {
        let pgd = AttackConfig::default_pgd();
        AttackSection {
            eps: pgd.eps,
            pgd_alpha: pgd.alpha,
            pgd_steps: pgd.steps,
            pgd_random_start: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrainMode {
    Natural,
    Adversarial,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Natural => "natural",
            TrainMode::Adversarial => "adversarial",
        }
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "natural" => Ok(TrainMode::Natural),
            "adversarial" => Ok(TrainMode::Adversarial),
            other => Err(format!("unknown train mode '{other}'")),
        }
    }
}

/// One grid cell: everything but the trial index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub strategy: Strategy,
    pub train_mode: TrainMode,
    pub attack: AttackKind,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("{}_{}_{}", self.strategy, self.train_mode.as_str(), self.attack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointPolicy {
    All,
    Final,
    None,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Loads `path` (or the defaults) and applies `key=value` overrides.
    ///
    /// Keys are dotted TOML paths such as `train.iterations_per_round`.
    /// Values are parsed as TOML and fall back to plain strings.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let patch = parse_override(o)?;
            merge(&mut table, patch);
        }
        toml::Table::try_into(table).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 prefix of the resolved config, excluding filesystem paths.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.data_dir = PathBuf::new();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn strategy_list(&self) -> Result<Vec<Strategy>, CliError> {
        parse_list(&self.strategies, "strategies")
    }

    pub fn train_mode_list(&self) -> Result<Vec<TrainMode>, CliError> {
        parse_list(&self.train_modes, "train_modes")
    }

    pub fn attack_list(&self) -> Result<Vec<AttackKind>, CliError> {
        let kinds: Vec<AttackKind> = parse_list(&self.attacks, "attacks")?;
        if kinds.contains(&AttackKind::None) {
            return Err(CliError::Config(
                "attacks: use fgsm or pgd; natural training is a train mode".into(),
            ));
        }
        Ok(kinds)
    }

    pub fn checkpoint_policy(&self) -> Result<CheckpointPolicy, CliError> {
        match self.checkpoints.as_str() {
            "all" => Ok(CheckpointPolicy::All),
            "final" => Ok(CheckpointPolicy::Final),
            "none" => Ok(CheckpointPolicy::None),
            other => Err(CliError::Config(format!(
                "checkpoints: expected all, final or none, got '{other}'"
            ))),
        }
    }

    /// Cells in grid order: strategy, then train mode, then attack.
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let mut cells = Vec::new();
        for &strategy in &self.strategy_list()? {
            for &train_mode in &self.train_mode_list()? {
                for &attack in &self.attack_list()? {
                    cells.push(Cell {
                        strategy,
                        train_mode,
                        attack,
                    });
                }
            }
        }
        Ok(cells)
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }

    pub fn split_seed(&self) -> u64 {
        self.train.split_seed.unwrap_or(self.base_seed)
    }

    pub fn attack_config(&self, kind: AttackKind) -> AttackConfig {
        let a = &self.attack;
        match kind {
            AttackKind::None => AttackConfig::none(),
            AttackKind::Fgsm => AttackConfig::fgsm(a.eps),
            AttackKind::Pgd => {
                let mut cfg = AttackConfig::pgd(a.eps, a.pgd_alpha, a.pgd_steps);
                if a.pgd_random_start {
                    cfg.random_start = Some(self.base_seed);
                }
                cfg
            }
        }
    }

    pub fn train_config(&self, cell: &Cell, trial: usize) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let eval_attack = self.attack_config(cell.attack);
        let mut eval_attack_seeded = eval_attack;
        if eval_attack_seeded.random_start.is_some() {
            eval_attack_seeded.random_start = Some(self.trial_seed(trial));
        }
        let cfg = TrainConfig {
            iterations_per_round: t.iterations_per_round,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            pruning_rounds: t.pruning_rounds,
            train_attack: match cell.train_mode {
                TrainMode::Natural => AttackConfig::none(),
                TrainMode::Adversarial => eval_attack_seeded,
            },
            eval_attack: eval_attack_seeded,
            strategy: cell.strategy,
            seed: self.trial_seed(trial),
            adam: AdamConfig {
                lr: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.adam_eps,
            },
            prune_rates: PruneRates::new(t.prune_rates.clone()).map_err(|e| CliError::Config(e.to_string()))?,
            rounding: t
                .rounding
                .parse()
                .map_err(|e: ticket_core::Error| CliError::Config(e.to_string()))?,
            eval_subset: (t.eval_subset > 0).then_some(t.eval_subset),
            adversarial_weight: t.adversarial_weight,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching the dataset.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 {
            return Err(CliError::Config("trials must be >= 1".into()));
        }
        if self.dataset.is_empty() {
            return Err(CliError::Config("dataset must be set".into()));
        }
        self.checkpoint_policy()?;
        let cells = self.cells()?;
        if cells.is_empty() {
            return Err(CliError::Config(
                "empty grid: need at least one strategy, train mode and attack".into(),
            ));
        }
        let _: PruneRounding = self
            .train
            .rounding
            .parse()
            .map_err(|e: ticket_core::Error| CliError::Config(e.to_string()))?;
        for cell in &cells {
            self.train_config(cell, 0)?;
        }
        Ok(())
    }
}

fn parse_list<T: FromStr>(items: &[String], what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    let mut out = Vec::with_capacity(items.len());
    for s in items {
        out.push(s.parse::<T>().map_err(|e| CliError::Config(format!("{what}: {e}")))?);
    }
    Ok(out)
}

fn parse_override(o: &str) -> Result<toml::Table, CliError> {
    let (key, value) = o
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty()
        || !key
            .split('.')
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
    {
        return Err(CliError::Config(format!(
            "override key '{key}' is not a dotted identifier"
        )));
    }
    let value = value.trim();
    toml::from_str::<toml::Table>(&format!("{key} = {value}"))
        .or_else(|_| toml::from_str::<toml::Table>(&format!("{key} = {}", toml::Value::String(value.into()))))
        .map_err(|e| CliError::Config(format!("override '{o}': {e}")))
}

fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
