//! Order-preserving map helpers over slices. `map_slice` dispatches to rayon
//! when the `parallel` feature is on; `map_slice_seq` is the sequential twin
//! that is always compiled (it is the fallback body and the baseline arm of
//! the bench suite). Both return results in input order, so callers that
//! reduce sequentially afterwards stay bit-deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_slice_seq<T: Sync, R: Send, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R + Sync,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, R: Send, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T: Sync, R: Send, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R + Sync,
{
    map_slice_seq(items, f)
}

/// Map over a range of indices, preserving order.
pub fn map_range_seq<R: Send, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_range<R: Send, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R: Send, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync,
{
    map_range_seq(n, f)
}
