//! Worker pool sized by `CONFDIM_WORKERS`.

use rayon::prelude::*;

use crate::LabError;

pub const WORKERS_ENV: &str = "CONFDIM_WORKERS";

/// Pool with `CONFDIM_WORKERS` threads, or one per available core.
pub fn pool() -> Result<rayon::ThreadPool, LabError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| LabError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| LabError::Pool(e.to_string()))
}

/// Maps `f` over `seeds` in the pool; results come back sorted by seed.
pub fn map_seeds<T, F>(pool: &rayon::ThreadPool, seeds: &[u64], f: F) -> Result<Vec<T>, LabError>
where
    T: Send,
    F: Fn(u64) -> Result<T, LabError> + Sync,
{
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    pool.install(|| sorted.par_iter().map(|&s| f(s)).collect())
}
