//! Execution strategy: data-parallel over independent work items when the
//! `parallel` feature is on (the default), plain sequential loops when it
//! is off. Results are collected in input order either way, so outputs are
//! identical across strategies and thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map a function over a slice of independent items.
#[cfg(feature = "parallel")]
pub fn map_items<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_items<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Map a fallible function over an index range, stopping at the first
/// error.
#[cfg(feature = "parallel")]
pub fn try_map_range<U: Send, E: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<U, E> + Sync + Send,
) -> Result<Vec<U>, E> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn try_map_range<U, E>(
    n: usize,
    f: impl Fn(usize) -> Result<U, E>,
) -> Result<Vec<U>, E> {
    (0..n).map(f).collect()
}

/// Sequential reference path, available under both configurations so the
/// two strategies can be benchmarked against each other.
pub fn map_items_sequential<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Run `f` inside a thread pool of the requested size. With `jobs = None`
/// (or without the `parallel` feature) the ambient strategy is used.
#[cfg(feature = "parallel")]
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match jobs {
        Some(k) if k > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .expect("thread pool")
            .install(f),
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<R>(jobs: Option<usize>, f: impl FnOnce() -> R) -> R {
    let _ = jobs;
    f()
}
