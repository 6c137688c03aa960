use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Uniform samples on `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
pub fn he_uniform_init(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::invalid("he_uniform_init: fan_in must be at least 1"));
    }
    uniform(shape, (6.0 / fan_in as f64).sqrt(), seed)
}

/// Uniform samples on `[-sqrt(6 / (fan_in + fan_out)), +...]`.
pub fn glorot_uniform_init(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor> {
    if fan_in + fan_out == 0 {
        return Err(Error::invalid("glorot_uniform_init: fans must not both be zero"));
    }
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), seed)
}

fn uniform(shape: &[usize], limit: f64, seed: u64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut rng = seed::rng(seed);
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit) as f32).collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv1_limit_and_bounds() {
        let t = he_uniform_init(&[5, 5, 3, 64], 75, 1).unwrap();
        let limit = (6.0f64 / 75.0).sqrt();
        assert!((limit - 0.282843).abs() < 1e-6);
        assert!(t.data().iter().all(|v| v.abs() <= limit as f32));
        assert_eq!(t, he_uniform_init(&[5, 5, 3, 64], 75, 1).unwrap());
        assert_ne!(t, he_uniform_init(&[5, 5, 3, 64], 75, 2).unwrap());
        assert!(he_uniform_init(&[2], 0, 1).is_err());
    }

    #[test]
    fn uniform_law_statistics() {
        let t = he_uniform_init(&[10_000], 75, 9).unwrap();
        let limit = (6.0f64 / 75.0).sqrt();
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / 10_000.0;
        let max = t.data().iter().fold(0.0f64, |m, &v| m.max(v as f64));
        assert!(mean.abs() < 0.01 * limit, "mean {mean}");
        assert!(max > 0.9 * limit);
    }
}
