//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the map runs on a rayon pool; without it,
//! or with `workers == Some(1)`, it runs in a plain loop. Both paths return
//! results in input order, so downstream reductions are bit-identical.

/// Maps `f` over `items` on the calling thread.
pub fn sequential_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `items` on a rayon pool with `workers` threads (all cores when `None`).
#[cfg(feature = "parallel")]
pub fn parallel_map<T, R, F>(items: &[T], workers: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match workers {
        None => items.par_iter().map(f).collect(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.par_iter().map(f).collect(),
        },
    }
}

/// Dispatches to [`parallel_map`] when available, otherwise [`sequential_map`].
pub fn map<T, R, F>(items: &[T], workers: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers == Some(1) {
        return sequential_map(items, f);
    }
    #[cfg(feature = "parallel")]
    {
        parallel_map(items, workers, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sequential_map(items, f)
    }
}

/// Number of threads `map` will use for `workers`.
pub fn effective_workers(workers: Option<usize>) -> usize {
    match workers {
        Some(n) => n.max(1),
        #[cfg(feature = "parallel")]
        None => rayon::current_num_threads(),
        #[cfg(not(feature = "parallel"))]
        None => 1,
    }
}
