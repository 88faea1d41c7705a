//! Ordered parallel map over independent work items.
//!
//! Results always come back in input order, and every item computes its own
//! randomness from its stream keys, so outputs do not depend on the number
//! of workers. Without the `parallel` feature everything runs on the
//! calling thread.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    #[default]
    Sequential,
    Threads(usize),
}

impl Parallelism {
    /// `workers = 1` (or 0) means sequential.
    pub fn from_workers(workers: usize) -> Self {
        if workers <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(workers)
        }
    }

    pub fn workers(&self) -> usize {
        match *self {
            Parallelism::Sequential => 1,
            Parallelism::Threads(k) => k.max(1),
        }
    }

    pub fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        match *self {
            Parallelism::Sequential => items.into_iter().map(f).collect(),
            Parallelism::Threads(k) => threaded_map(k, items, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn threaded_map<T, R, F>(k: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
        Ok(pool) => pool.install(|| items.into_par_iter().map(f).collect()),
        Err(_) => items.into_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn threaded_map<T, R, F>(_k: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    items.into_iter().map(f).collect()
}
