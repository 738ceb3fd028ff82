//! Intra-layer parallelism. Node solves within one layer are independent;
//! layers run sequentially. The pool size is capped by the `RBSDE_THREADS`
//! environment variable (unset or 0 picks the default).

use rayon::prelude::*;
use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

pub fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let threads = std::env::var("RBSDE_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

const PARALLEL_CUTOFF: usize = 512;

/// Order-preserving map over one layer's node indices.
pub fn map_nodes<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if len < PARALLEL_CUTOFF {
        (0..len).map(f).collect()
    } else {
        pool().install(|| (0..len).into_par_iter().map(f).collect())
    }
}
