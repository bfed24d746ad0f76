//! Data-parallel map helpers with a sequential fallback.
//!
//! Every batch operation in the crate funnels through [`map`] or
//! [`map_range`]. Results are always returned in input order, so output is
//! identical whichever mode ran.

/// How a batch operation distributes its independent work items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// identical to [`Execution::Sequential`].
    #[default]
    Parallel,
}

impl Execution {
    /// True when this mode will actually run on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f(index, item)` over a slice, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Maps `f(index)` over `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Sizes the global worker pool. Only the first call has an effect; without
/// the `parallel` feature this is a no-op.
pub fn configure_threads(jobs: usize) {
    #[cfg(feature = "parallel")]
    {
        let jobs = jobs.max(1);
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            log::debug!("worker pool already initialised: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}
