//! Data-parallel helpers with a sequential fallback.
//!
//! Results always come back in input order, so callers that reduce them
//! sequentially get the same floating-point sums for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f(chunk_index, chunk)` over consecutive `chunk`-sized slices.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        items.par_chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
    }
}

/// Maps `f` over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
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

/// Whether the crate was built with the thread pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Sizes the global thread pool. Returns false when the crate was built
/// without it or the pool was already initialized.
pub fn set_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}
