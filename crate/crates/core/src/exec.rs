//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in input order, so switching between
//! [`Execution::Sequential`] and [`Execution::Parallel`] never changes a result.
//! Without the `parallel` feature, `Parallel` silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch work (prediction, featurization, sweep cells) is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().with_min_len(16).map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().with_min_len(16).map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Coarse-grained variant of [`Execution::map_range`] for expensive cells
    /// (one experiment run per index).
    pub fn map_tasks<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().with_max_len(1).map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

/// Mixes several words into one 64-bit seed (splitmix64 finalizer per word).
///
/// Used to derive independent per-cell / per-iteration generators from a base seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        acc ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        acc = splitmix(acc);
    }
    acc
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
