//! Batch-level parallelism.
//!
//! Kernels split work per sample and combine partial results in index
//! order, so outputs are bitwise identical for any thread count.

use rayon::prelude::*;

/// Environment variable capping internal parallelism.
pub const THREADS_ENV: &str = "WEFT_THREADS";

/// Configures the global pool from `WEFT_THREADS` (default 1).
///
/// Returns the thread count in effect. Calling it more than once is harmless.
pub fn init_from_env() -> usize {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1);
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    rayon::current_num_threads()
}

/// `(0..n).map(f)`, run on the rayon pool when it has more than one thread.
pub fn map_indices<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    if n > 1 && rayon::current_num_threads() > 1 {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
