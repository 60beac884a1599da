//! Data-parallel seam.
//!
//! Batch gradient accumulation, split evaluation, and teacher-state
//! precomputation all map an independent function over a slice and collect
//! results in input order. With the `parallel` feature (default) the map runs
//! on rayon's pool; without it the same code runs sequentially. Per-item work
//! never shares mutable state and all floating-point reductions happen after
//! collection, in index order, so both paths produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Sequential map with the same signature as [`par_map`]. Kept unconditionally
/// so benches and equivalence tests can compare the two paths directly.
pub fn seq_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
