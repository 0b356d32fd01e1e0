//! Data-parallel map with a sequential fallback.
//!
//! Multistart, whole-registry benchmarking and landscape scans apply an
//! expensive independent computation to each element of a small list. With
//! the `parallel` feature (default) these run on the rayon pool; without it
//! the same call is a plain sequential map. Output order matches input
//! order in both builds, so results are identical either way.

#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Send + Sync,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
