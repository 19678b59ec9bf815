//! Training rounds and the iterative pruning loop.
//!
//! A round runs a fixed iteration budget of Adam steps on shuffled
//! mini-batches, optionally mixing in adversarial examples regenerated from
//! the current weights at every step. Every `eval_every` iterations the
//! network is scored on the validation and test sets, naturally and under
//! the evaluation attack. Early stopping is observational: the round always
//! spends its whole budget and the evaluation with the lowest tracked
//! validation loss is reported alongside.

use log::{debug, info};

use crate::attacks::{perturb, AttackConfig};
use crate::data::{batches, Batches, DataSplit, Dataset};
use crate::error::{Error, Result};
use crate::model::{count_correct, cross_entropy, MaskedNetwork, LENET_300_100};
use crate::optim::{AdamConfig, AdamState};
use crate::pruning::{next_round_weights, prune_masks, sparsity, PruneRates, PruneRounding, Strategy};
use crate::rng::{streams, SeededRng};

/// Rows per attacked chunk during evaluation.
const EVAL_ATTACK_CHUNK: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations_per_round: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Total number of training rounds; round 0 is the dense network.
    pub pruning_rounds: usize,
    /// Attack used to build training examples; `none` for natural training.
    pub train_attack: AttackConfig,
    /// Attack used for the adversarial half of every evaluation.
    pub eval_attack: AttackConfig,
    pub strategy: Strategy,
    pub seed: u64,
    pub adam: AdamConfig,
    pub prune_rates: PruneRates,
    pub rounding: PruneRounding,
    /// Evaluate on the first `n` rows of validation and test only.
    pub eval_subset: Option<usize>,
    /// Weight of the adversarial term in the training loss.
    pub adversarial_weight: f64,
    pub layer_dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations_per_round: 50_000,
            batch_size: 60,
            eval_every: 500,
            pruning_rounds: 20,
            train_attack: AttackConfig::none(),
            eval_attack: AttackConfig::default_fgsm(),
            strategy: Strategy::Original,
            seed: 0,
            adam: AdamConfig::default(),
            prune_rates: PruneRates::default(),
            rounding: PruneRounding::default(),
            eval_subset: None,
            adversarial_weight: 0.5,
            layer_dims: LENET_300_100.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.eval_every == 0 || self.iterations_per_round < self.eval_every {
            return bad(format!(
                "need iterations_per_round ({}) >= eval_every ({}) >= 1",
                self.iterations_per_round, self.eval_every
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.pruning_rounds == 0 {
            return bad("pruning_rounds must be >= 1".into());
        }
        if self.layer_dims.len() < 2 || self.prune_rates.as_slice().len() != self.layer_dims.len() - 1 {
            return bad(format!(
                "{} prune rates for {} layers",
                self.prune_rates.as_slice().len(),
                self.layer_dims.len().saturating_sub(1)
            ));
        }
        if !(0.0..=1.0).contains(&self.adversarial_weight) {
            return bad(format!("adversarial_weight {} not in [0, 1]", self.adversarial_weight));
        }
        self.train_attack.validate()?;
        self.eval_attack.validate()
    }

    pub fn is_adversarial(&self) -> bool {
        !self.train_attack.is_none()
    }
}

/// Natural and adversarial metrics on one evaluation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub natural_loss: f64,
    pub natural_acc: f64,
    pub adv_loss: f64,
    pub adv_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub round: usize,
    pub iteration: usize,
    /// `P_m` during this round.
    pub sparsity: f64,
    pub validation: SplitMetrics,
    pub test: SplitMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopResult {
    pub iteration: usize,
    /// The tracked validation loss (adversarial under adversarial training).
    pub validation_loss: f64,
    pub validation: SplitMetrics,
    pub test: SplitMetrics,
}

/// Keeps the evaluation with the lowest tracked validation loss; the
/// earliest one wins ties.
#[derive(Debug, Clone, Default)]
pub struct EarlyStopTracker {
    track_adversarial: bool,
    best: Option<EarlyStopResult>,
}

impl EarlyStopTracker {
    pub fn new(track_adversarial: bool) -> Self {
        EarlyStopTracker {
            track_adversarial,
            best: None,
        }
    }

    pub fn observe(&mut self, rec: &EvalRecord) {
        let loss = if self.track_adversarial {
            rec.validation.adv_loss
        } else {
            rec.validation.natural_loss
        };
        if self.best.is_none_or(|b| loss < b.validation_loss) {
            self.best = Some(EarlyStopResult {
                iteration: rec.iteration,
                validation_loss: loss,
                validation: rec.validation,
                test: rec.test,
            });
        }
    }

    pub fn best(&self) -> Option<EarlyStopResult> {
        self.best
    }
}

/// Scores `net` on `data`, naturally and under `attack`.
///
/// With `attack.kind == none` the adversarial columns repeat the natural ones.
pub fn evaluate(net: &MaskedNetwork, data: &Dataset, attack: &AttackConfig) -> Result<SplitMetrics> {
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let (mut nat_loss, mut nat_ok, mut adv_loss, mut adv_ok) = (0.0, 0usize, 0.0, 0usize);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_ATTACK_CHUNK).min(n);
        let rows = (end - start) as f64;
        let (x, y) = data.slice(start, end);
        let logits = net.forward(&x)?;
        nat_loss += cross_entropy(&logits, &y)? * rows;
        nat_ok += count_correct(&logits, &y);
        if attack.is_none() {
            adv_loss = nat_loss;
            adv_ok = nat_ok;
        } else {
            let xa = perturb(net, &x, &y, attack)?;
            let logits = net.forward(&xa)?;
            adv_loss += cross_entropy(&logits, &y)? * rows;
            adv_ok += count_correct(&logits, &y);
        }
        start = end;
    }
    let n = n as f64;
    Ok(SplitMetrics {
        natural_loss: nat_loss / n,
        natural_acc: nat_ok as f64 / n,
        adv_loss: adv_loss / n,
        adv_acc: adv_ok as f64 / n,
    })
}

/// Validation and test sets used for periodic evaluation.
#[derive(Debug, Clone)]
pub struct EvalSets {
    pub validation: Dataset,
    pub test: Dataset,
}

impl EvalSets {
    pub fn from_split(split: &DataSplit, subset: Option<usize>) -> Self {
        match subset {
            Some(n) => EvalSets {
                validation: split.validation.take(n),
                test: split.test.take(n),
            },
            None => EvalSets {
                validation: split.validation.clone(),
                test: split.test.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub round: usize,
    pub sparsity: f64,
    pub records: Vec<EvalRecord>,
    pub early_stop: EarlyStopResult,
}

/// Trains `net` for one round. Masks stay fixed; `θ ← m ⊙ θ` after every step.
pub fn train_round(
    net: &mut MaskedNetwork,
    eval: &EvalSets,
    batches: &mut Batches<'_>,
    optimizer: &mut AdamState,
    cfg: &TrainConfig,
    round: usize,
) -> Result<RoundOutput> {
    cfg.validate()?;
    let p_m = sparsity(net.masks());
    let adversarial = cfg.is_adversarial();
    let w_adv = cfg.adversarial_weight;
    let mut tracker = EarlyStopTracker::new(adversarial);
    let mut records = Vec::with_capacity(cfg.iterations_per_round / cfg.eval_every);

    for iteration in 1..=cfg.iterations_per_round {
        let (x, y) = batches
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
        let (loss, grads) = if adversarial {
            let xa = perturb(net, &x, &y, &cfg.train_attack)?;
            let (nat_loss, nat_grads) = net.loss_and_param_grads(&x, &y)?;
            let (adv_loss, adv_grads) = net.loss_and_param_grads(&xa, &y)?;
            let grads = nat_grads
                .iter()
                .zip(&adv_grads)
                .map(|(gn, ga)| gn.zip_map(ga, "combine", |a, b| (1.0 - w_adv) * a + w_adv * b))
                .collect::<Result<Vec<_>>>()?;
            ((1.0 - w_adv) * nat_loss + w_adv * adv_loss, grads)
        } else {
            net.loss_and_param_grads(&x, &y)?
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                round,
                iteration,
            });
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                round,
                iteration,
            });
        }
        optimizer.step(net.weights_mut(), &grads)?;
        net.apply_masks();

        if iteration % cfg.eval_every == 0 {
            let rec = EvalRecord {
                round,
                iteration,
                sparsity: p_m,
                validation: evaluate(net, &eval.validation, &cfg.eval_attack)?,
                test: evaluate(net, &eval.test, &cfg.eval_attack)?,
            };
            debug!(
                "round {round} it {iteration}: train loss {loss:.4}, val nat {:.4} adv {:.4}, test nat {:.4} adv {:.4}",
                rec.validation.natural_acc, rec.validation.adv_acc, rec.test.natural_acc, rec.test.adv_acc
            );
            tracker.observe(&rec);
            records.push(rec);
        }
    }

    let early_stop = tracker.best().expect("at least one evaluation per round");
    info!(
        "round {round} (P_m {:.1}%): final test nat {:.4} adv {:.4}; early stop at {}",
        p_m * 100.0,
        records.last().map_or(f64::NAN, |r| r.test.natural_acc),
        records.last().map_or(f64::NAN, |r| r.test.adv_acc),
        early_stop.iteration
    );
    Ok(RoundOutput {
        round,
        sparsity: p_m,
        records,
        early_stop,
    })
}

/// Network state handed to the per-round observer of [`run_strategy_with`].
pub struct RoundState<'a> {
    pub output: &'a RoundOutput,
    /// Weights at the start of the round (masked).
    pub start: &'a MaskedNetwork,
    /// Weights at the end of the round.
    pub end: &'a MaskedNetwork,
}

/// Runs every round of iterative pruning under `cfg.strategy`.
pub fn run_strategy(cfg: &TrainConfig, split: &DataSplit) -> Result<Vec<RoundOutput>> {
    run_strategy_with(cfg, split, |_| Ok(()))
}

/// [`run_strategy`], calling `observe` after each round.
pub fn run_strategy_with<F>(cfg: &TrainConfig, split: &DataSplit, mut observe: F) -> Result<Vec<RoundOutput>>
where
    F: FnMut(RoundState<'_>) -> Result<()>,
{
    cfg.validate()?;
    let eval = EvalSets::from_split(split, cfg.eval_subset);
    let mut init_rng = SeededRng::with_stream(cfg.seed, streams::INIT);
    let mut reinit_rng = SeededRng::with_stream(cfg.seed, streams::REINIT);
    let mut stream = batches(
        &split.train,
        cfg.batch_size,
        SeededRng::with_stream(cfg.seed, streams::BATCHES),
    );

    let mut net = MaskedNetwork::glorot(&cfg.layer_dims, &mut init_rng);
    let mut optimizer = AdamState::new(cfg.adam, net.weights());
    let mut outputs = Vec::with_capacity(cfg.pruning_rounds);

    for round in 0..cfg.pruning_rounds {
        if round > 0 {
            let masks = prune_masks(net.weights(), net.masks(), &cfg.prune_rates, cfg.rounding)?;
            let weights = next_round_weights(
                cfg.strategy,
                net.weights(),
                net.initial_weights(),
                &masks,
                &mut reinit_rng,
            )?;
            net.set_masks(masks)?;
            net.set_weights(weights)?;
            optimizer.reset();
        }
        let start = net.clone();
        let out = train_round(&mut net, &eval, &mut stream, &mut optimizer, cfg, round)?;
        observe(RoundState {
            output: &out,
            start: &start,
            end: &net,
        })?;
        outputs.push(out);
    }
    Ok(outputs)
}
