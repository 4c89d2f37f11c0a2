//! Peripheral large-kernel convolution.
//!
//! A full `k×k` depthwise kernel is parameterized by a much smaller `k'×k'`
//! compact kernel through a [`grid::SharingGrid`]: positions near the kernel
//! center keep their own weight while peripheral positions share one weight
//! across exponentially growing blocks. The crate provides grid construction,
//! kernel expansion and gradient scatter, dense/stripe/peripheral depthwise
//! convolution with backward passes, kernel-wise positional embeddings,
//! partial-channel execution, re-parameterization merges, architecture-level
//! parameter and FLOPs accounting, and effective-receptive-field metrics.

pub mod arch;
pub mod bench;
pub mod check;
pub mod conv;
pub mod erf;
mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::{RegionPartition, SharingGrid};
pub use kernel::{CompactKernel, PositionalEmbedding};
pub use tensor::{Real, Tensor};

/// Runs `f` over `0..n` and collects the results in index order.
///
/// With the `parallel` feature the indices are distributed over the rayon
/// pool; every index produces an independent result, so the output is
/// identical to the sequential path.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
