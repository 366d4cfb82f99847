//! Data-parallel helpers with a sequential fallback.
//!
//! Every hot loop in the crate is expressed as an indexed map followed by
//! an ordered reduction, so results are bit-identical whether the map runs
//! on one thread or many. The `parallel` feature selects rayon; without it
//! everything degrades to plain iterators. A runtime switch lets benchmarks
//! compare both paths in a single build.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enable or disable the rayon path at runtime (no-op without the
/// `parallel` feature). Intended for benchmarks and thread-cap plumbing.
pub fn set_parallel(on: bool) {
    PARALLEL.store(on, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// `(0..n).map(f)` collected in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    // below ~64 tasks the pool overhead dominates any per-row work
    if n >= 64 && PARALLEL.load(Ordering::Relaxed) {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant; the baseline side of the benchmark suite.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Ordered sum of per-chunk results; the only reduction used on float data.
pub fn sum_ordered(parts: &[f64]) -> f64 {
    parts.iter().sum()
}

/// Cap the rayon worker count (no-op without the `parallel` feature or if
/// a global pool already exists).
#[cfg(feature = "parallel")]
pub fn configure_thread_pool(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn configure_thread_pool(_n: usize) {}
