//! Replica fan-out with a compile-time sequential fallback.
//!
//! Estimators express their work as an indexed map over replicas; each
//! replica seeds its own RNG stream, so the result vector is identical
//! whether it was produced by rayon or by a plain loop.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f` for replica indices `0..n` and collect results in index order.
///
/// `threads = 0` uses the default rayon pool; any other value runs inside a
/// dedicated pool of that size. Without the `parallel` feature the work runs
/// sequentially and `threads` is ignored.
pub fn map_replicas<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            (0..n).into_par_iter().map(f).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("failed to build thread pool");
            pool.install(|| (0..n).into_par_iter().map(f).collect())
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_by_replica_index() {
        let out = map_replicas(100, 0, |i| i * i);
        assert_eq!(out[7], 49);
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let a = map_replicas(64, 1, |i| (i as f64).sin());
        let b = map_replicas(64, 3, |i| (i as f64).sin());
        assert_eq!(a, b);
    }
}
