//! Data-parallel utterance evaluation on a rayon pool.

use rayon::prelude::*;
use rayon::ThreadPool;
use tapcrnn_core::autodiff::Array;
use tapcrnn_core::models::{BatchExecutor, GradientJob, LossJob};
use tapcrnn_core::Result;

use crate::error::Error;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "TAPCRNN_WORKERS";

/// Worker count from `explicit`, else [`WORKERS_ENV`], else the number of
/// available cores.
pub fn worker_count(explicit: Option<usize>) -> crate::error::Result<usize> {
    let n = match explicit {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("{WORKERS_ENV}=`{v}` is not a worker count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(Error::Usage("worker count must be at least 1".into()));
    }
    Ok(n)
}

/// Runs jobs on a dedicated pool; results come back in job order.
pub struct Pool(ThreadPool);

impl Pool {
    pub fn new(workers: usize) -> crate::error::Result<Self> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map(Pool)
            .map_err(|e| Error::Usage(format!("cannot start {workers} workers: {e}")))
    }

    pub fn map<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, n: usize, f: F) -> Vec<T> {
        self.0.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

impl BatchExecutor for Pool {
    fn gradients(&self, jobs: usize, job: &GradientJob<'_>) -> Vec<Result<(f64, Vec<Array>)>> {
        self.map(jobs, job)
    }

    fn losses(&self, jobs: usize, job: &LossJob<'_>) -> Vec<Result<f64>> {
        self.map(jobs, job)
    }
}
