//! Shared fixtures for the benchmarks.

use ticket_core::{MaskedNetwork, SeededRng, Tensor};

/// Batch of `b` uniform images with random one-hot labels.
pub fn batch(b: usize, dim: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = SeededRng::new(seed);
    let x = Tensor::new(&[b, dim], (0..b * dim).map(|_| rng.uniform()).collect()).expect("batch shape");
    let mut y = Tensor::zeros(&[b, 10]);
    for i in 0..b {
        y.set(i, rng.below(10), 1.0);
    }
    (x, y)
}

pub fn lenet(seed: u64) -> MaskedNetwork {
    MaskedNetwork::lenet_300_100(&mut SeededRng::new(seed))
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.standard_normal()).collect()).expect("matrix shape")
}
