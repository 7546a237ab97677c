//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction in the crate is performed over fixed-size chunks whose
//! partial results are combined in chunk order, so results do not depend on
//! the worker count or on whether the `parallel` feature is enabled.

use serde::{Deserialize, Serialize};

/// Rows (or observations) per work unit.
pub const CHUNK: usize = 256;

/// How per-row and per-observation loops are executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// Whether this build can actually run in parallel.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel; output order is preserved.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().with_min_len(64).map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Apply `f(index, item)` to every element of `items`.
pub fn for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        items
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = exec;
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Chunk ranges `[start, end)` covering `0..n` in steps of [`CHUNK`].
pub fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n)))
        .collect()
}

/// Sum of `f(i)` over `0..n` with a worker-count-independent reduction order.
pub fn sum_range<F>(exec: Execution, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let partials = map_range(exec, n.div_ceil(CHUNK), |c| {
        let mut acc = 0.0;
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            acc += f(i);
        }
        acc
    });
    partials.into_iter().sum()
}
