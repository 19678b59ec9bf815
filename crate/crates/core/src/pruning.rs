//! Layerwise magnitude pruning and the per-round weight strategies.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::init::glorot_normal_init;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Fraction of each layer's surviving weights removed per round.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneRates(Vec<f64>);

impl PruneRates {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::InvalidArgument(format!("prune rate {r} not in (0, 1)")));
        }
        Ok(PruneRates(rates))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Default for PruneRates {
    /// 20% for the hidden layers, 10% for the output layer.
    fn default() -> Self {
        PruneRates(vec![0.2, 0.2, 0.1])
    }
}

/// How a fractional `rate × surviving` is turned into a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneRounding {
    /// Round the pruned count up (keep `floor((1−rate)·u)`).
    #[default]
    Ceil,
    HalfAwayFromZero,
    Floor,
}

impl FromStr for PruneRounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ceil" => Ok(PruneRounding::Ceil),
            "half-away-from-zero" | "round" => Ok(PruneRounding::HalfAwayFromZero),
            "floor" => Ok(PruneRounding::Floor),
            other => Err(Error::InvalidArgument(format!("unknown rounding '{other}'"))),
        }
    }
}

impl fmt::Display for PruneRounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneRounding::Ceil => "ceil",
            PruneRounding::HalfAwayFromZero => "half-away-from-zero",
            PruneRounding::Floor => "floor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Rewind survivors to `θ₀`.
    Original,
    /// Draw fresh weights for the survivors.
    Random,
    /// Keep the trained weights.
    Continued,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Original, Strategy::Random, Strategy::Continued];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Original => "original",
            Strategy::Random => "random",
            Strategy::Continued => "continued",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Strategy::Original),
            "random" => Ok(Strategy::Random),
            "continued" => Ok(Strategy::Continued),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Fraction of weights still unpruned, `‖m‖₀ / |θ|`.
pub fn sparsity(masks: &[Tensor]) -> f64 {
    let total: usize = masks.iter().map(Tensor::len).sum();
    let ones: usize = masks
        .iter()
        .map(|m| m.data().iter().filter(|&&v| v != 0.0).count())
        .sum();
    ones as f64 / total as f64
}

/// Number of weights to remove from `surviving` at `rate`.
pub fn prune_count(rate: f64, surviving: usize, rounding: PruneRounding) -> usize {
    let x = rate * surviving as f64;
    // Products like 0.2 × 235200 may land one ulp off an integer or half.
    let tol = 1e-9 * x.max(1.0);
    let nearest_half = (x * 2.0).round() / 2.0;
    let x = if (x - nearest_half).abs() <= tol {
        nearest_half
    } else {
        x
    };
    let n = match rounding {
        PruneRounding::Ceil => x.ceil(),
        PruneRounding::HalfAwayFromZero => x.round(),
        PruneRounding::Floor => x.floor(),
    };
    (n.max(0.0) as usize).min(surviving)
}

/// Zeroes the `prune_count(rate, u)` surviving entries of smallest `|θ|`,
/// breaking ties by lowest flat index. Pruned entries stay pruned.
pub fn magnitude_prune_layer(weights: &Tensor, mask: &Tensor, rate: f64, rounding: PruneRounding) -> Result<Tensor> {
    if weights.shape() != mask.shape() {
        return Err(Error::shape("magnitude_prune_layer", weights.shape(), mask.shape()));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!("prune rate {rate} not in (0, 1)")));
    }
    let mut survivors: Vec<usize> = (0..mask.len()).filter(|&i| mask.data()[i] != 0.0).collect();
    if survivors.is_empty() {
        log::warn!("magnitude_prune_layer: layer has no surviving weights; mask unchanged");
        return Ok(mask.clone());
    }
    let k = prune_count(rate, survivors.len(), rounding);
    let mut out = mask.clone();
    if k == 0 {
        return Ok(out);
    }
    let w = weights.data();
    let order = |&a: &usize, &b: &usize| -> Ordering {
        w[a].abs()
            .partial_cmp(&w[b].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    };
    if k < survivors.len() {
        survivors.select_nth_unstable_by(k - 1, order);
    }
    for &i in &survivors[..k] {
        out.data_mut()[i] = 0.0;
    }
    Ok(out)
}

/// Applies [`magnitude_prune_layer`] to every layer with its own rate.
pub fn prune_masks(
    weights: &[Tensor],
    masks: &[Tensor],
    rates: &PruneRates,
    rounding: PruneRounding,
) -> Result<Vec<Tensor>> {
    if rates.as_slice().len() != weights.len() || masks.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} layers, {} masks, {} prune rates",
            weights.len(),
            masks.len(),
            rates.as_slice().len()
        )));
    }
    weights
        .iter()
        .zip(masks)
        .zip(rates.as_slice())
        .map(|((w, m), &r)| magnitude_prune_layer(w, m, r, rounding))
        .collect()
}

/// Starting weights for the next round under `strategy`, already masked.
pub fn next_round_weights(
    strategy: Strategy,
    trained: &[Tensor],
    initial: &[Tensor],
    masks: &[Tensor],
    rng: &mut SeededRng,
) -> Result<Vec<Tensor>> {
    let base: Vec<Tensor> = match strategy {
        Strategy::Original => initial.to_vec(),
        Strategy::Continued => trained.to_vec(),
        Strategy::Random => initial
            .iter()
            .map(|t| glorot_normal_init(rng, t.shape()[0], t.shape()[1]))
            .collect(),
    };
    base.iter().zip(masks).map(|(w, m)| w.hadamard(m)).collect()
}

/// Surviving weight count per layer after each of `rounds` rounds, starting
/// from dense layers of the given sizes. Entry `k` is the state after `k` rounds.
pub fn survivor_schedule(
    layer_sizes: &[usize],
    rates: &PruneRates,
    rounds: usize,
    rounding: PruneRounding,
) -> Vec<Vec<usize>> {
    let mut counts = layer_sizes.to_vec();
    let mut out = vec![counts.clone()];
    for _ in 0..rounds {
        for (c, &r) in counts.iter_mut().zip(rates.as_slice()) {
            *c -= prune_count(r, *c, rounding);
        }
        out.push(counts.clone());
    }
    out
}

/// `P_m` after each round of [`survivor_schedule`].
pub fn sparsity_schedule(
    layer_sizes: &[usize],
    rates: &PruneRates,
    rounds: usize,
    rounding: PruneRounding,
) -> Vec<f64> {
    let total: usize = layer_sizes.iter().sum();
    survivor_schedule(layer_sizes, rates, rounds, rounding)
        .iter()
        .map(|c| c.iter().sum::<usize>() as f64 / total as f64)
        .collect()
}

/// `P_m` as a percentage label with one decimal, e.g. `51.3`.
pub fn sparsity_label(p_m: f64) -> String {
    format!("{:.1}", p_m * 100.0)
}
