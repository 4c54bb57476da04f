//! Execution policy for the data-parallel kernels.
//!
//! Every parallel kernel splits its index range into fixed-size chunks and
//! reduces the per-chunk partials in chunk order, so results are bit-identical
//! between [`Exec::Sequential`] and [`Exec::Parallel`] and independent of the
//! thread count. Without the `parallel` feature, `Exec::Parallel` runs
//! sequentially.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Evaluates `f` on consecutive chunks of `0..len` and returns the results
    /// in chunk order.
    pub fn map_chunks<T, F>(self, len: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let n_chunks = len.div_ceil(chunk);
        let range_of = |c: usize| c * chunk..((c + 1) * chunk).min(len);
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n_chunks).into_par_iter().map(|c| f(range_of(c))).collect()
            }
            _ => (0..n_chunks).map(|c| f(range_of(c))).collect(),
        }
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map_items<I, T, F>(self, items: Vec<I>, f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }
            _ => items.into_iter().map(f).collect(),
        }
    }
}

/// Runs `f` on a dedicated pool of `threads` workers. Without the `parallel`
/// feature `f` simply runs on the calling thread.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> crate::Result<R> {
    if threads == 0 {
        return Err(crate::CpdError::Argument("thread count must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::CpdError::Argument(format!("cannot start {threads} threads: {e}")))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    Ok(f())
}
