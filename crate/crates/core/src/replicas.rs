//! Replica fan-out. Every replica owns its noise stream (`stream_id` =
//! replica index) and results come back in replica-index order, so the
//! worker count never changes an aggregate.

use rayon::prelude::*;

use crate::{Error, Result};

/// Runs `f(0), …, f(n - 1)` on `threads` workers (rayon's global pool when
/// `None`) and returns the results in index order. The first error in index
/// order wins.
pub fn run_replicas<T, F>(n: u64, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let job = || (0..n).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match threads {
        None => job(),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(job)
        }
    }
}
