//! Data-parallel building blocks with a sequential fallback.
//!
//! With the default `parallel` feature the mapping helpers fan out over
//! rayon; without it they run in place. Reductions are chunked with a fixed
//! chunk size and combined in index order, so every result is bit-identical
//! across thread counts and across the parallel/sequential builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed reduction chunk; part of the numeric contract, do not tune per run.
pub const SUM_CHUNK: usize = 4096;

/// Sum with a fixed-chunk deterministic reduction tree.
pub fn sum(xs: &[f64]) -> f64 {
    chunk_sums(xs).into_iter().sum()
}

/// Always-sequential variant of [`sum`] (same chunking, same result).
pub fn sum_seq(xs: &[f64]) -> f64 {
    xs.chunks(SUM_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .sum()
}

#[cfg(feature = "parallel")]
fn chunk_sums(xs: &[f64]) -> Vec<f64> {
    xs.par_chunks(SUM_CHUNK).map(|c| c.iter().sum::<f64>()).collect()
}

#[cfg(not(feature = "parallel"))]
fn chunk_sums(xs: &[f64]) -> Vec<f64> {
    xs.chunks(SUM_CHUNK).map(|c| c.iter().sum::<f64>()).collect()
}

/// Map `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant of [`map_indices`]; kept callable in parallel
/// builds for benchmarks and determinism checks.
pub fn map_indices_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Mean of per-index values produced by `f`, reduced deterministically.
pub fn mean_of_indices<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let values = map_indices(n, f);
    sum(&values) / n as f64
}

/// Configure the global rayon pool; no-op in a sequential build.
#[cfg(feature = "parallel")]
pub fn configure_threads(threads: usize) {
    if threads > 0 {
        // Ignore the error from a second initialization; the pool is global.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_threads: usize) {}
