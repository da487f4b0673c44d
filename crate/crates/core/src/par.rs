//! Data-parallel helpers over index ranges.
//!
//! With the `parallel` feature (default) work fans out on the rayon pool;
//! without it, or after [`set_sequential(true)`](set_sequential), everything
//! runs in a plain loop. Results are always returned in index order, and every
//! caller reduces them sequentially, so outputs are bit-identical either way.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::Result;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces the sequential path at runtime even when `parallel` is compiled in.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// Sizes the global worker pool. Must run before any parallel work; a no-op
/// without the `parallel` feature.
pub fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(crate::Error::InvalidArgument("worker count must be positive".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(())
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Evaluates `f(0..n)` and collects the results in order.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Like [`map`], failing with the lowest-index error.
pub fn try_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map(n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_index_order() {
        let v = map(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn try_map_reports_first_error() {
        let r: Result<Vec<usize>> = try_map(10, |i| {
            if i >= 3 {
                Err(crate::Error::InvalidArgument(format!("bad {i}")))
            } else {
                Ok(i)
            }
        });
        assert_eq!(r.unwrap_err().to_string(), "invalid argument: bad 3");
    }
}
