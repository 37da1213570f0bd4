//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature disabled every [`Execution`] runs
//! sequentially, so results never depend on the feature set.

/// How independent work items are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the rayon global pool when the `parallel` feature is enabled.
    #[default]
    Parallel,
}

/// Below this many items a parallel map runs sequentially anyway.
pub const MIN_PARALLEL_LEN: usize = 256;

impl Execution {
    /// Whether work will actually be farmed out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..len`, preserving order.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && len >= MIN_PARALLEL_LEN {
            use rayon::prelude::*;
            return (0..len)
                .into_par_iter()
                .with_min_len(MIN_PARALLEL_LEN / 4)
                .map(f)
                .collect();
        }
        (0..len).map(f).collect()
    }

    /// Maps a fallible `f` over `0..len`; returns the first error by index.
    pub fn try_map<T, E, F>(self, len: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(len, f).into_iter().collect()
    }
}
