//! Execution layer: data-parallel maps with a sequential fallback.
//!
//! Everything routed through here is an index-to-value map with no
//! cross-element state, so the parallel and sequential paths produce
//! bit-identical results. With the `parallel` feature (default), maps run
//! on the rayon pool unless forced sequential via [`SequentialGuard`];
//! without it, rayon is not linked and all maps are plain loops.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Scope guard that forces all [`map_collect`] calls onto the sequential
/// path while alive. Used by benchmarks to compare both paths in one
/// binary; restores the previous state on drop.
pub struct SequentialGuard {
    prev: bool,
}

impl SequentialGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let prev = FORCE_SEQUENTIAL.swap(true, Ordering::SeqCst);
        SequentialGuard { prev }
    }
}

impl Drop for SequentialGuard {
    fn drop(&mut self) {
        FORCE_SEQUENTIAL.store(self.prev, Ordering::SeqCst);
    }
}

/// True when maps will run sequentially (feature off or guard active).
pub fn is_sequential() -> bool {
    cfg!(not(feature = "parallel")) || FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// `(0..n).map(f)` collected in index order.
#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if is_sequential() {
        map_collect_seq(n, f)
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// `(0..n).map(f)` collected in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_collect_seq(n, f)
}

/// Sequential map, always available (benchmark baseline).
pub fn map_collect_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
