//! Data-parallel driver for the hot loops.
//!
//! Every parallel site in this crate maps an index range to per-index
//! results and combines them in index order, so the output is identical
//! to the sequential fallback up to nothing at all: reductions never
//! depend on scheduling order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `0..n` through `f`, in parallel when the `parallel` feature is
/// enabled. Results are returned in index order either way.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Always-sequential variant, used by the benchmark suite as the
/// comparison baseline.
pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}
