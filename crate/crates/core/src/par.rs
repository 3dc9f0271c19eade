//! Index-ordered data parallelism.
//!
//! Every work unit derives its own random stream from its index, so the
//! collected output is the same whether the units run on a rayon pool or on
//! the calling thread. Building without the `parallel` feature swaps in the
//! sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluates `f(0..n)` and returns the results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` on a dedicated pool of `threads` workers (0 means the rayon default).
#[cfg(feature = "parallel")]
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R, F>(_threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    f()
}

/// Number of workers the current context would use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
