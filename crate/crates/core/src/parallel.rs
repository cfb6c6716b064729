//! Deterministic replica fan-out. Results are collected in replica order, so
//! any reduction done afterwards is independent of the thread count.

use rayon::prelude::*;

/// Worker count: `Some(n)` builds a dedicated pool, `None` uses the global one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Threads(pub Option<usize>);

impl Threads {
    pub fn new(n: usize) -> Self {
        Threads(Some(n.max(1)))
    }

    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        match self.0 {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool")
                .install(op),
            None => op(),
        }
    }
}

/// Evaluates `f(i)` for `i in 0..n` and returns the results in index order.
pub fn map_replicas<T, F>(n: u64, threads: Threads, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    threads.install(|| (0..n).into_par_iter().map(&f).collect())
}
