//! Deterministic data parallelism.
//!
//! Work is split into fixed-size chunks whose partial results are combined in
//! chunk order, so sums come out bitwise identical for any thread count.

use rayon::prelude::*;

/// Default number of items per parallel chunk.
pub const CHUNK: usize = 16;

/// Caps the global thread pool from `CELLFLOW_THREADS`, if set. Safe to call
/// more than once; only the first successful call takes effect.
pub fn init_threads() {
    if let Some(n) = std::env::var("CELLFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

/// Sums `f(range)` over consecutive chunks of `0..n`. Every call to `f`
/// returns a vector of length `len`; partials are added in chunk order.
pub fn chunked_sum<F>(n: usize, chunk: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>) -> Vec<f64> + Sync,
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let partials: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| f(s..(s + chunk).min(n)))
        .collect();
    let mut out = vec![0.0; len];
    for p in partials {
        debug_assert_eq!(p.len(), len);
        for (o, v) in out.iter_mut().zip(&p) {
            *o += v;
        }
    }
    out
}

/// Parallel map over `0..n` preserving order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    (0..n).into_par_iter().map(&f).collect()
}
