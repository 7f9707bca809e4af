//! Deterministic data-parallel mapping.
//!
//! Every parallel site in the crate maps an index range through a pure
//! per-item function and collects results in index order. Items derive any
//! randomness from their own index-keyed RNG stream, so the output is a pure
//! function of the inputs and the thread count never changes a single byte.
//!
//! With the `parallel` feature (default) the work runs on a process-wide
//! rayon pool sized once via [`configure_threads`]; without it, or with one
//! thread, the same closures run sequentially.

use std::sync::OnceLock;

static THREADS: OnceLock<usize> = OnceLock::new();

#[cfg(feature = "parallel")]
static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Fixes the worker count for the process. First call wins; later calls with
/// a different value return `false`. Zero means "number of CPUs".
pub fn configure_threads(n: usize) -> bool {
    let resolved = if n == 0 {
        std::thread::available_parallelism().map_or(1, |p| p.get())
    } else {
        n
    };
    *THREADS.get_or_init(|| resolved) == resolved
}

/// Worker count in effect (1 until configured).
pub fn effective_threads() -> usize {
    THREADS.get().copied().unwrap_or(1)
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(effective_threads())
            .build()
            .expect("rayon pool construction cannot fail with a plain size")
    })
}

/// Maps `0..n` through `f`, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if effective_threads() > 1 {
            return map_indexed_pool(n, f);
        }
    }
    map_indexed_seq(n, f)
}

/// Sequential reference path. Kept public so the bench suite can compare the
/// two implementations directly.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Pool-backed path; `collect` on an indexed parallel iterator preserves
/// order, which the determinism contract relies on.
#[cfg(feature = "parallel")]
pub fn map_indexed_pool<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    pool().install(|| (0..n).into_par_iter().map(f).collect())
}
