//! Data-parallel helpers.
//!
//! With the `parallel` feature the mapping helpers fan out over rayon;
//! without it they run sequentially with the same signatures and the same
//! output order. `map_seq` is always sequential so benchmarks can compare
//! both paths in one build.

/// Map over a slice, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Map over a slice, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential reference path, kept available in all builds.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Thread cap from `APPRAISAL_LAB_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("APPRAISAL_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Run `f` under a rayon pool capped by `APPRAISAL_LAB_THREADS`. Without
/// the cap (or without the `parallel` feature) `f` runs directly.
#[cfg(feature = "parallel")]
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("rayon pool")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_thread_cap<R>(f: impl FnOnce() -> R) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let out = map(&items, |&x| x * 2);
        let expected = map_seq(&items, |&x| x * 2);
        assert_eq!(out, expected);
    }
}
