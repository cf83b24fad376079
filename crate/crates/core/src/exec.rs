//! Per-item dispatch across videos.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] runs on a
//! rayon pool; without it every mode runs sequentially. Results always come
//! back in input order, and the first error in input order wins, so output
//! does not depend on the thread count.

use crate::error::Result;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// rayon's global pool
    #[default]
    Parallel,
    /// dedicated pool with this many threads
    ParallelJobs(usize),
}

impl Execution {
    /// `--jobs` semantics: 0 means "all cores", 1 means sequential.
    pub fn from_jobs(jobs: usize) -> Self {
        match jobs {
            0 => Execution::Parallel,
            1 => Execution::Sequential,
            n => Execution::ParallelJobs(n),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Execution::Sequential
    }
}

pub fn try_map<T, R, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Parallel => items.par_iter().map(f).collect(),
            Execution::ParallelJobs(jobs) => match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                // pool creation only fails on resource exhaustion; degrade gracefully
                Err(_) => items.iter().map(f).collect(),
            },
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = exec;
        items.iter().map(f).collect()
    }
}
