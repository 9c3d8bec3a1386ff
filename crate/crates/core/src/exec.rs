//! Ordered fan-out used for shard workers and repetition sweeps.
//!
//! Results come back in input order whatever the degree of parallelism, and
//! each item carries its own RNG seed, so outputs do not depend on scheduling.

/// Applies `f` to every item, on up to `parallelism` threads.
///
/// With `parallelism <= 1`, or when the crate is built without the
/// `parallel` feature, this is a plain sequential map.
pub fn map_ordered<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallelism > 1 && items.len() > 1 {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
                Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
                // fall through to the sequential path if no pool can be created
                Err(_) => {}
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallelism;
    items.iter().map(f).collect()
}

/// Parallelism to use when the caller does not specify one.
pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
