//! Weight initialization.

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// He-normal initialization: i.i.d. draws from N(0, 2/fan_in).
pub fn he_normal_init(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Config("he_normal_init: fan_in must be >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| std * rng.normal())
        .collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_variance(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
    }

    #[test]
    fn variance_matches_two_over_fan_in() {
        let mut rng = RngStream::new(2024);
        let t = he_normal_init(&[100_000], 50, &mut rng).unwrap();
        let var = sample_variance(t.data());
        assert!((var - 0.04).abs() < 0.04 * 0.05, "fan_in 50 variance {var}");

        let t = he_normal_init(&[100_000], 2, &mut rng).unwrap();
        let var = sample_variance(t.data());
        assert!((var - 1.0).abs() < 0.05, "fan_in 2 variance {var}");
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = he_normal_init(&[64], 8, &mut RngStream::new(7)).unwrap();
        let b = he_normal_init(&[64], 8, &mut RngStream::new(7)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rejects_zero_fan_in() {
        assert!(he_normal_init(&[4], 0, &mut RngStream::new(1)).is_err());
    }
}
