//! Bounded worker pool over pure jobs. Results are collected by job index,
//! so scheduling order can never affect outputs.

use rayon::prelude::*;

use crate::error::CliError;

/// Run `n_jobs` pure jobs on at most `workers` threads and return results in
/// job-index order.
pub fn run_ordered<T, F>(n_jobs: usize, workers: usize, job: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(CliError::runtime)?;
    Ok(pool.install(|| (0..n_jobs).into_par_iter().map(job).collect()))
}
