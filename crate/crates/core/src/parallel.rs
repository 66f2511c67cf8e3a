//! Deterministic parallel replication.
//!
//! Monte Carlo replications are keyed by a stream index and mapped in
//! parallel; results are collected in index order and reduced sequentially,
//! so every reduction is independent of thread count and scheduling.

use rayon::prelude::*;

/// Apply `f` to every stream index in `0..reps`, in parallel, returning the
/// results in index order.
pub fn replicate_map<T, F>(reps: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..reps).into_par_iter().map(f).collect()
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_preserves_index_order() {
        let out = replicate_map(100, |i| i * i);
        assert!(out.iter().enumerate().all(|(i, &v)| v == (i * i) as u64));
    }

    #[test]
    fn replication_is_pool_size_invariant() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| replicate_map(1000, |i| (i as f64).sin()))
        };
        assert_eq!(run(1), run(8));
    }
}
