//! Data-parallel execution with a sequential fallback.
//!
//! Hot loops (batch quantization, k-means assignment and restarts,
//! Monte-Carlo trials, ablation cells) go through [`Parallelism::map`]. With
//! the `parallel` feature enabled and [`Parallelism::Parallel`] selected the
//! work runs on the rayon pool; otherwise it runs in order on the calling
//! thread. Results are always collected in input order, so both modes return
//! identical values.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// True when work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over fixed-size chunks of `0..n` and concatenates the
    /// per-chunk outputs in order.
    pub fn map_chunks<T, F>(self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> Vec<T> + Sync + Send,
    {
        let chunk = chunk.max(1);
        let n_chunks = n.div_ceil(chunk);
        self.map(n_chunks, |c| f(c * chunk..((c + 1) * chunk).min(n)))
            .into_iter()
            .flatten()
            .collect()
    }
}
