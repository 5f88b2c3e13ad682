//! Execution policy for per-path work.

/// How independent simulation units are scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Exec {
    /// Rayon's current pool when the `parallel` feature is on, otherwise sequential.
    #[default]
    Auto,
    Sequential,
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<T, F>(n: usize, exec: Exec, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Auto => {
            use rayon::prelude::*;
            (0..n).into_par_iter().with_min_len(64).map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Number of workers `Exec::Auto` will use.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
