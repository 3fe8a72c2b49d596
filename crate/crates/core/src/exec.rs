//! How independent jobs get run. The core only ships a serial executor;
//! `bpnet` adds a thread pool behind the same trait.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Runs `n` independent jobs and returns their results in job order.
///
/// Implementations must produce exactly what [`Serial`] produces, whatever
/// order the jobs finish in. A failing job is reported as
/// [`Error::Job`] carrying the lowest failing index.
pub trait Executor {
    fn run<T, F>(&self, n: usize, job: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn run<T, F>(&self, n: usize, job: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        (0..n)
            .map(|i| job(i).map_err(|e| job_error(i, e)))
            .collect()
    }
}

/// Wraps a job failure with its index, leaving already-wrapped errors alone.
pub fn job_error(index: usize, err: Error) -> Error {
    match err {
        e @ Error::Job { .. } => e,
        e => Error::Job {
            index,
            source: Box::new(e),
        },
    }
}
