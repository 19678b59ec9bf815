//! Density histograms of the initial weights that survive pruning.

use std::path::Path;

use log::warn;
use serde::Serialize;
use ticket_core::init::glorot_std;
use ticket_core::Checkpoint;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
    /// `count / (n · width)`, so `width · Σ density = 1`.
    pub densities: Vec<f64>,
}

impl Histogram {
    /// Equal-width bins spanning `[min, max]`. `None` for an empty input.
    pub fn new(values: &[f64], bins: usize) -> Option<Histogram> {
        assert!(bins > 0, "need at least one bin");
        let (&first, rest) = values.split_first()?;
        let (mut min, mut max) = (first, first);
        for &v in rest {
            min = min.min(v);
            max = max.max(v);
        }
        let (lo, width) = if max > min {
            (min, (max - min) / bins as f64)
        } else {
            (min - 0.5, 1.0 / bins as f64)
        };
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let norm = values.len() as f64 * width;
        let densities = counts.iter().map(|&c| c as f64 / norm).collect();
        Some(Histogram {
            lo,
            width,
            counts,
            densities,
        })
    }

    pub fn area(&self) -> f64 {
        self.width * self.densities.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerHistogram {
    pub layer: usize,
    pub surviving: usize,
    pub histogram: Option<Histogram>,
}

/// θ₀ at the positions where the mask is one.
pub fn surviving_initial(ckpt: &Checkpoint, layer: usize) -> Vec<f64> {
    let net = &ckpt.network;
    net.initial_weights()[layer]
        .data()
        .iter()
        .zip(net.masks()[layer].data())
        .filter(|(_, &m)| m != 0.0)
        .map(|(&w, _)| w)
        .collect()
}

pub fn weight_histograms(ckpt: &Checkpoint, bins: usize) -> Vec<LayerHistogram> {
    (0..ckpt.network.num_layers())
        .map(|layer| {
            let values = surviving_initial(ckpt, layer);
            let histogram = Histogram::new(&values, bins);
            if histogram.is_none() {
                warn!(
                    "round {} layer {layer}: no surviving weights, empty histogram",
                    ckpt.round
                );
            }
            LayerHistogram {
                layer,
                surviving: values.len(),
                histogram,
            }
        })
        .collect()
}

/// Fraction of surviving θ₀ with `|θ₀| < σ/2`, σ the layer's init std.
pub fn small_init_fraction(ckpt: &Checkpoint, layer: usize) -> Option<f64> {
    let shape = ckpt.network.initial_weights()[layer].shape();
    let half_sigma = glorot_std(shape[0], shape[1]) / 2.0;
    let values = surviving_initial(ckpt, layer);
    if values.is_empty() {
        return None;
    }
    Some(values.iter().filter(|v| v.abs() < half_sigma).count() as f64 / values.len() as f64)
}

#[derive(Serialize)]
struct HistRow {
    round: u32,
    layer: usize,
    surviving: usize,
    bin: usize,
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
    density: f64,
}

/// One CSV row per bin; layers with no survivors contribute no rows.
pub fn write_histograms(path: &Path, round: u32, hists: &[LayerHistogram]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for lh in hists {
        let Some(h) = &lh.histogram else { continue };
        for (bin, (&count, &density)) in h.counts.iter().zip(&h.densities).enumerate() {
            w.serialize(HistRow {
                round,
                layer: lh.layer,
                surviving: lh.surviving,
                bin,
                bin_lo: h.lo + bin as f64 * h.width,
                bin_hi: h.lo + (bin + 1) as f64 * h.width,
                count,
                density,
            })
            .map_err(|e| CliError::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ticket_core::{MaskedNetwork, SeededRng, Tensor};

    #[test]
    fn unit_area() {
        let mut rng = SeededRng::new(4);
        let xs: Vec<f64> = (0..1000).map(|_| rng.standard_normal()).collect();
        for bins in [1, 7, 50] {
            let h = Histogram::new(&xs, bins).unwrap();
            assert!((h.area() - 1.0).abs() < 1e-9);
            assert_eq!(h.counts.iter().sum::<usize>(), 1000);
        }
    }

    #[test]
    fn constant_input_and_empty_input() {
        let h = Histogram::new(&[2.0; 3], 4).unwrap();
        assert!((h.area() - 1.0).abs() < 1e-12);
        assert!(Histogram::new(&[], 4).is_none());
    }

    #[test]
    fn maximum_lands_in_last_bin() {
        let h = Histogram::new(&[0.0, 0.5, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
    }

    #[test]
    fn unpruned_layer_is_bell_shaped() {
        let mut rng = SeededRng::new(9);
        let net = MaskedNetwork::glorot(&[200, 100, 10], &mut rng);
        let ckpt = Checkpoint {
            seed: 9,
            round: 0,
            network: net,
        };
        let hs = weight_histograms(&ckpt, 21);
        let h = hs[0].histogram.as_ref().unwrap();
        assert_eq!(hs[0].surviving, 20_000);
        let peak = h.densities.iter().cloned().fold(0.0, f64::max);
        assert!(h.densities[10] > 0.8 * peak, "centre bin should be near the peak");
        assert!(h.densities[0] < 0.05 * peak && h.densities[20] < 0.05 * peak);
        // Normal(0, σ): P(|z| < 0.5) ≈ 0.383.
        let f = small_init_fraction(&ckpt, 0).unwrap();
        assert!((f - 0.383).abs() < 0.02, "{f}");
    }

    #[test]
    fn fully_pruned_layer_has_empty_histogram() {
        let mut rng = SeededRng::new(1);
        let mut net = MaskedNetwork::glorot(&[4, 3, 2], &mut rng);
        let masks = vec![Tensor::zeros(&[4, 3]), Tensor::ones(&[3, 2])];
        net.set_masks(masks).unwrap();
        let ckpt = Checkpoint {
            seed: 1,
            round: 5,
            network: net,
        };
        let hs = weight_histograms(&ckpt, 3);
        assert!(hs[0].histogram.is_none());
        assert_eq!(hs[1].surviving, 6);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_histograms(&p, 5, &hs).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
    }
}
