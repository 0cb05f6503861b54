use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// Xavier-normal weight matrix of shape `fan_out x fan_in`: entries are
/// i.i.d. `N(0, 2 / (fan_in + fan_out))`.
pub fn xavier_init<R: Rng + ?Sized>(fan_out: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let data = (0..fan_out * fan_in).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![fan_out, fan_in], data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, Mlp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empirical_std_matches_xavier_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = xavier_init(200, 200, &mut rng);
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = (2.0f64 / 400.0).sqrt();
        assert!((target - 0.0707).abs() < 1e-4);
        assert!((std - target).abs() <= 0.1 * target, "std {std}");
    }

    #[test]
    fn biases_are_zero_and_init_is_deterministic() {
        let a = Mlp::new(&[3, 7, 2], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = Mlp::new(&[3, 7, 2], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(a.layers().iter().all(|l| l.bias.data().iter().all(|v| *v == 0.0)));
        let bits =
            |m: &Mlp| -> Vec<u64> { m.params().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect() };
        assert_eq!(bits(&a), bits(&b));
    }
}
