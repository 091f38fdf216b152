//! Seeded sharding for Monte Carlo loops.
//!
//! Every estimator splits its budget over a fixed number of shards. Shard `i`
//! draws from a ChaCha stream seeded with `seed + i`, and shard results are
//! merged in index order, so the output does not depend on how many threads
//! rayon happens to use.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type Rng = ChaCha8Rng;

pub const SHARDS: usize = 16;

pub fn shard_rng(seed: u64, shard: usize) -> Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(shard as u64))
}

/// Splits `n` into `shards` nearly equal parts, larger parts first.
pub fn split_budget(n: u64, shards: usize) -> Vec<u64> {
    let base = n / shards as u64;
    let extra = (n % shards as u64) as usize;
    (0..shards)
        .map(|i| base + u64::from(i < extra))
        .collect()
}

/// Runs `f(shard_index, budget, rng)` for every shard and returns the results in
/// shard order.
pub fn run_shards<T, F>(seed: u64, n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64, &mut Rng) -> T + Sync,
{
    let budgets = split_budget(n, SHARDS);
    budgets
        .into_par_iter()
        .enumerate()
        .map(|(i, b)| {
            let mut rng = shard_rng(seed, i);
            f(i, b, &mut rng)
        })
        .collect()
}

/// Mean and standard error of per-shard estimates.
pub fn shard_mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn budget_split_sums() {
        let b = split_budget(1003, 16);
        assert_eq!(b.iter().sum::<u64>(), 1003);
        assert_eq!(b[0], 63);
        assert_eq!(b[15], 62);
    }

    #[test]
    fn shards_are_ordered_and_repeatable() {
        let a = run_shards(5, 160, |i, b, rng| (i, b, rng.random::<u64>()));
        let b = run_shards(5, 160, |i, b, rng| (i, b, rng.random::<u64>()));
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(k, x)| x.0 == k));
    }
}
