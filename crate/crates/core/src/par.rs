//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the per-node loops run on the rayon pool;
//! without it the same closures run on the calling thread. Reductions split
//! the index range into fixed-size chunks, sum each chunk in order and then
//! combine the chunk sums in order, so results are bit-identical across
//! thread counts and across the two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed reduction chunk length. Changing it changes the rounding pattern.
pub const CHUNK: usize = 1024;

/// Deterministic sum of `f(i)` for `i in 0..len`.
pub fn sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = len.div_ceil(CHUNK);
    let chunk_sum = |c: usize| {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(len);
        let mut acc = 0.0;
        for i in start..end {
            acc += f(i);
        }
        acc
    };
    #[cfg(feature = "parallel")]
    let partial: Vec<f64> = (0..chunks).into_par_iter().map(chunk_sum).collect();
    #[cfg(not(feature = "parallel"))]
    let partial: Vec<f64> = (0..chunks).map(chunk_sum).collect();
    partial.into_iter().fold(0.0, |a, b| a + b)
}

/// Maximum of `f(i)` over `0..len`; `f64::NEG_INFINITY` for an empty range.
/// `max` is order-independent, so no chunking is needed.
pub fn max<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).reduce(|| f64::NEG_INFINITY, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fills `out` in blocks of `stride` values: `f(block_index, block)`.
pub fn fill_blocks<F>(out: &mut [f64], stride: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(stride > 0 && out.len().is_multiple_of(stride));
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(stride)
        .enumerate()
        .for_each(|(i, block)| f(i, block));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(stride).enumerate().for_each(|(i, block)| f(i, block));
}

/// `out[i] = f(i)`.
pub fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    #[cfg(not(feature = "parallel"))]
    out.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
}

/// Maps independent jobs, preserving input order in the output.
pub fn map_jobs<T, R, F>(jobs: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        jobs.into_par_iter().enumerate().map(|(i, job)| f(i, job)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.into_iter().enumerate().map(|(i, job)| f(i, job)).collect()
    }
}
