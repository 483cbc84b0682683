//! Data-parallel helpers with a sequential fallback.
//!
//! Reductions are split into fixed-size chunks and the per-chunk partial
//! results are combined in chunk order, so a sum is bit-identical whether it
//! ran on one thread or many. Without the `parallel` feature every policy
//! runs sequentially.

use serde::{Deserialize, Serialize};

/// Samples per partial sum in [`chunked_sum`].
pub const REDUCTION_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this policy actually fans out to a thread pool in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Sums `len`-dimensional contributions of items `0..count`.
///
/// `accumulate(range, acc)` adds the contributions of the items in `range`
/// into `acc`. Chunk boundaries depend only on `count`, never on the thread
/// pool, which keeps the result reproducible.
pub fn chunked_sum<F>(exec: Execution, count: usize, len: usize, accumulate: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) + Sync + Send,
{
    let ranges: Vec<std::ops::Range<usize>> = (0..count)
        .step_by(REDUCTION_CHUNK)
        .map(|start| start..(start + REDUCTION_CHUNK).min(count))
        .collect();
    let partials = map(exec, &ranges, |r| {
        let mut acc = vec![0.0; len];
        accumulate(r.clone(), &mut acc);
        acc
    });
    let mut total = vec![0.0; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
