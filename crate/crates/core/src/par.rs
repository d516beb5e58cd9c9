//! Data-parallel helpers.
//!
//! Every parallel loop in the crate goes through [`map_range`], which maps an
//! index range to an ordered `Vec`. Work items never share accumulators, so
//! results are bitwise identical for any thread count. Without the `parallel`
//! feature the same loops run sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `0..n` through `f`, preserving index order in the output.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible variant of [`map_range`]; the first error by index wins.
pub fn try_map_range<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

/// Degree of parallelism for a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Single worker thread.
    Sequential,
    /// A dedicated pool with the given number of threads.
    Threads(usize),
    /// The global pool (all available cores).
    #[default]
    Available,
}

impl Parallelism {
    pub fn from_threads(n: usize) -> Self {
        match n {
            0 => Parallelism::Available,
            1 => Parallelism::Sequential,
            n => Parallelism::Threads(n),
        }
    }

    /// Runs `f` with this degree of parallelism.
    pub fn install<R, F>(self, f: F) -> R
    where
        R: Send,
        F: FnOnce() -> R + Send,
    {
        #[cfg(feature = "parallel")]
        {
            let threads = match self {
                Parallelism::Available => return f(),
                Parallelism::Sequential => 1,
                Parallelism::Threads(n) => n.max(1),
            };
            match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(pool) => pool.install(f),
                Err(e) => {
                    log::warn!("could not build thread pool ({e}); using global pool");
                    f()
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = self;
            f()
        }
    }
}
