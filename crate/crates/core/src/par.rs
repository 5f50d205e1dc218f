//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the loops run on the rayon pool;
//! without it the same code runs sequentially. Work is split into
//! fixed-size chunks and partial results are combined in chunk order, so
//! floating-point results are bit-identical regardless of thread count or
//! feature selection.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed chunk length for reductions. Constant (not thread-count dependent)
/// so the summation tree never changes.
pub const CHUNK: usize = 256;

pub fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(n.div_ceil(CHUNK));
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        out.push(start..end);
        start = end;
    }
    out
}

/// Order-preserving indexed map over `0..n`.
#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Order-preserving fallible indexed map; the first error wins.
#[cfg(feature = "parallel")]
pub fn try_map_collect<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn try_map_collect<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    F: Fn(usize) -> Result<T, E>,
{
    (0..n).map(f).collect()
}

/// Maps a function over fixed-size index chunks, preserving chunk order.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    chunk_ranges(n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(Range<usize>) -> T,
{
    chunk_ranges(n).into_iter().map(f).collect()
}

/// Fallible chunked map.
#[cfg(feature = "parallel")]
pub fn try_map_chunks<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(Range<usize>) -> Result<T, E> + Sync + Send,
{
    chunk_ranges(n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn try_map_chunks<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    F: Fn(Range<usize>) -> Result<T, E>,
{
    chunk_ranges(n).into_iter().map(f).collect()
}
