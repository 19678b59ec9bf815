//! Weight initialization.

use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Name recorded in run configs.
pub const INIT_SCHEME: &str = "glorot-normal";

pub fn glorot_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `fan_in × fan_out` matrix of i.i.d. `N(0, 2/(fan_in+fan_out))` draws,
/// filled in row-major order.
pub fn glorot_normal_init(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Tensor {
    assert!(fan_in >= 1 && fan_out >= 1, "fan_in and fan_out must be >= 1");
    let std = glorot_std(fan_in, fan_out);
    let data = (0..fan_in * fan_out).map(|_| rng.normal(0.0, std)).collect();
    Tensor::new(&[fan_in, fan_out], data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let a = glorot_normal_init(&mut SeededRng::new(7), 30, 20);
        let b = glorot_normal_init(&mut SeededRng::new(7), 30, 20);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn lenet_first_layer_statistics() {
        let w = glorot_normal_init(&mut SeededRng::new(1), 784, 300);
        let n = w.len() as f64;
        assert_eq!(w.len(), 235_200);
        let mean = w.sum() / n;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 1084.0;
        assert!((var / target - 1.0).abs() < 0.05, "var {var} vs {target}");
        assert!(mean.abs() < 3.0 * target.sqrt() / n.sqrt(), "mean {mean}");
    }
}
