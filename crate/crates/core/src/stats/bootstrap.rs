use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, Result};

/// Indices of subsample `i` drawn uniformly with replacement from `0..n`.
///
/// Each subsample has its own generator stream, so the draw depends only on
/// `(n, size, seed, i)` and not on evaluation order.
pub fn bootstrap_indices(n: usize, size: usize, seed: u64, i: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    (0..size).map(|_| rng.gen_range(0..n)).collect()
}

/// Means of `n_boot` subsamples of `size` values each.
pub fn bootstrap_means(values: &[f64], n_boot: usize, size: usize, seed: u64) -> Result<Vec<f64>> {
    ensure!(
        !values.is_empty(),
        InvalidArgument,
        "bootstrap of an empty sample"
    );
    ensure!(
        size >= 1,
        InvalidArgument,
        "bootstrap subsample size must be at least 1"
    );
    Ok((0..n_boot as u64)
        .into_par_iter()
        .map(|i| {
            let idx = bootstrap_indices(values.len(), size, seed, i);
            idx.iter().map(|&j| values[j]).sum::<f64>() / size as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input() {
        let means = bootstrap_means(&[4.5; 7], 200, 10, 3).unwrap();
        assert_eq!(means.len(), 200);
        assert!(means.iter().all(|&m| (m - 4.5).abs() < 1e-12));
    }

    #[test]
    fn deterministic_and_order_free() {
        let values: Vec<f64> = (0..50).map(|i| (i * i % 17) as f64).collect();
        let a = bootstrap_means(&values, 300, 20, 11).unwrap();
        assert_eq!(a, bootstrap_means(&values, 300, 20, 11).unwrap());
        assert_ne!(a, bootstrap_means(&values, 300, 20, 12).unwrap());
        // subsample 123 computed alone matches its slot in the full run
        let idx = bootstrap_indices(values.len(), 20, 11, 123);
        let alone = idx.iter().map(|&j| values[j]).sum::<f64>() / 20.0;
        assert_eq!(alone, a[123]);
    }

    #[test]
    fn mean_of_means_within_monte_carlo_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let values: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..100.0)).collect();
        let (n_boot, size) = (10_000, 100);
        let means = bootstrap_means(&values, n_boot, size, 7).unwrap();
        let grand = super::super::mean(&means);
        let sample_mean = super::super::mean(&values);
        let sd = super::super::population_variance(&values).sqrt();
        let bound = 3.0 * sd / ((size * n_boot) as f64).sqrt();
        assert!(
            (grand - sample_mean).abs() < bound,
            "{grand} vs {sample_mean} (bound {bound})"
        );
    }

    #[test]
    fn errors() {
        assert!(bootstrap_means(&[], 10, 5, 0).is_err());
        assert!(bootstrap_means(&[1.0], 10, 0, 0).is_err());
    }
}
