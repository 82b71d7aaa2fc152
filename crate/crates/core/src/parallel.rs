//! Sample-parallel helpers.
//!
//! `UILAB_THREADS` caps the worker count. When it is unset (or 1) everything
//! runs on the calling thread. Results are always returned in index order, so
//! any reduction done afterwards is independent of scheduling.

pub const THREADS_ENV: &str = "UILAB_THREADS";

pub fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1)
}

#[cfg(feature = "parallel")]
fn pool() -> Option<&'static rayon::ThreadPool> {
    use std::sync::OnceLock;
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let t = thread_cap();
        if t <= 1 {
            return None;
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()
    })
    .as_ref()
}

/// `(0..count).map(f)`, possibly spread over the worker pool.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if let Some(pool) = pool() {
        use rayon::prelude::*;
        return pool.install(|| (0..count).into_par_iter().map(&f).collect());
    }
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
