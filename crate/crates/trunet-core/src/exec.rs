//! Execution helpers for the data-parallel kernels.
//!
//! Every heavy kernel is expressed as "do `f` on each disjoint chunk of the
//! output buffer". With the `parallel` feature those chunks are distributed
//! over rayon; without it the same chunks run in order on the calling
//! thread. Chunk boundaries are fixed, so parallel and sequential execution
//! produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Routes every kernel through the sequential path even when the `parallel`
/// feature is enabled. Used by the benchmark suite to compare both paths in
/// one process; results are identical either way.
pub fn force_sequential(on: bool) {
    #[cfg(feature = "parallel")]
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = on;
}

/// Whether kernels will actually fan out over threads.
pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Runs `f(chunk_index, chunk)` over consecutive `chunk_len` slices of `out`.
/// The final chunk may be shorter. `chunk_len` must be nonzero.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    assert!(chunk_len > 0, "chunk_len must be nonzero");
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        out.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    for (i, c) in out.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}

/// Maps `f` over `0..n` collecting the results in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Chunk size used for scalar reductions.
pub(crate) const SUM_CHUNK: usize = 4096;

/// Deterministic sum: fixed-size chunk partials combined in order, so the
/// result does not depend on thread count or the `parallel` feature.
pub fn chunked_sum<T>(data: &[T]) -> T
where
    T: Copy + Send + Sync + std::ops::Add<Output = T> + num_traits::Zero,
{
    let partial = |c: &[T]| c.iter().fold(T::zero(), |a, &b| a + b);
    #[cfg(feature = "parallel")]
    if parallel_enabled() && data.len() > SUM_CHUNK {
        let partials: Vec<T> = data.par_chunks(SUM_CHUNK).map(partial).collect();
        return partials.iter().fold(T::zero(), |a, &b| a + b);
    }
    data.chunks(SUM_CHUNK)
        .map(partial)
        .fold(T::zero(), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_sequential_order() {
        let data: Vec<f32> = (0..20_000).map(|i| (i as f32).sin()).collect();
        let par = chunked_sum(&data);
        force_sequential(true);
        let seq = chunked_sum(&data);
        force_sequential(false);
        assert_eq!(par.to_bits(), seq.to_bits());
    }

    #[test]
    fn chunk_iteration_covers_everything() {
        let mut out = vec![0u32; 10_001];
        for_each_chunk_mut(&mut out, 128, |i, c| {
            for v in c.iter_mut() {
                *v = i as u32 + 1;
            }
        });
        assert!(out.iter().all(|&v| v > 0));
        assert_eq!(out[0], 1);
        assert_eq!(out[10_000], 10_000 / 128 + 1);
    }
}
