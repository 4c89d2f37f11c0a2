//! Compact kernels, their expansion to full kernels, positional embeddings
//! and re-parameterization merges.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure_shape, Error, Result};
use crate::grid::SharingGrid;
use crate::tensor::{Real, Tensor};

/// Per-channel `k'×k'` weights that parameterize a depthwise `k×k` kernel
/// through a sharing grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactKernel<T: Real = f32> {
    grid: SharingGrid,
    weights: Tensor<T>,
}

impl<T: Real> CompactKernel<T> {
    pub fn new(grid: SharingGrid, weights: Tensor<T>) -> Result<Self> {
        if weights.ndim() != 3 {
            return Err(Error::invalid(format!(
                "compact weights must be channels x k' x k', got dims {:?}",
                weights.dims()
            )));
        }
        let kp = grid.k_prime();
        ensure_shape(&[weights.dims()[0], kp, kp], weights.dims())?;
        Ok(CompactKernel { grid, weights })
    }

    pub fn zeros(grid: SharingGrid, channels: usize) -> Result<Self> {
        let kp = grid.k_prime();
        let weights = Tensor::zeros(&[channels, kp, kp])?;
        Ok(CompactKernel { grid, weights })
    }

    pub fn channels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn grid(&self) -> &SharingGrid {
        &self.grid
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    /// Stored parameters: `channels · k'²`.
    pub fn param_count(&self) -> usize {
        self.channels() * self.grid.params_per_channel()
    }

    pub fn expand(&self) -> Tensor<T> {
        expand_weights(&self.weights, &self.grid).expect("compact kernel shape is validated on construction")
    }

    /// Keeps the grid and replaces the weights, e.g. with a gradient.
    pub fn with_weights(&self, weights: Tensor<T>) -> Result<Self> {
        Self::new(self.grid.clone(), weights)
    }
}

/// Expands compact weights to the full kernel: `out[c,x,y] = w[c,a,b]` for
/// every `(x,y)` in region `(a,b)`.
pub fn expand<T: Real>(ck: &CompactKernel<T>) -> Tensor<T> {
    ck.expand()
}

fn expand_weights<T: Real>(weights: &Tensor<T>, grid: &SharingGrid) -> Result<Tensor<T>> {
    let (k, kp) = (grid.k(), grid.k_prime());
    let channels = weights.dims()[0];
    ensure_shape(&[channels, kp, kp], weights.dims())?;
    let part = grid.partition();
    let mut out = Tensor::zeros(&[channels, k, k])?;
    for c in 0..channels {
        let src = weights.outer(c);
        let dst = out.outer_mut(c);
        for x in 0..k {
            let row = &src[part.cell_of(x) * kp..(part.cell_of(x) + 1) * kp];
            for (y, v) in dst[x * k..(x + 1) * k].iter_mut().enumerate() {
                *v = row[part.cell_of(y)];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`expand`]: sums a full-kernel gradient over each region.
pub fn scatter_grad<T: Real>(grad_full: &Tensor<T>, grid: &SharingGrid) -> Result<Tensor<T>> {
    let (k, kp) = (grid.k(), grid.k_prime());
    if grad_full.ndim() != 3 {
        return Err(Error::invalid(format!(
            "full gradient must be channels x k x k, got dims {:?}",
            grad_full.dims()
        )));
    }
    let channels = grad_full.dims()[0];
    ensure_shape(&[channels, k, k], grad_full.dims())?;
    let part = grid.partition();
    let mut acc = vec![0.0f64; kp * kp];
    let mut out = Tensor::zeros(&[channels, kp, kp])?;
    for c in 0..channels {
        acc.fill(0.0);
        let src = grad_full.outer(c);
        for x in 0..k {
            let a = part.cell_of(x);
            for y in 0..k {
                acc[a * kp + part.cell_of(y)] += src[x * k + y].to_f64();
            }
        }
        for (dst, &v) in out.outer_mut(c).iter_mut().zip(&acc) {
            *dst = T::from_f64(v);
        }
    }
    Ok(out)
}

/// Additive per-stage table `h` (channels × k × k) combined with every input
/// sample inside the convolution window.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEmbedding<T: Real = f32> {
    h: Tensor<T>,
}

impl<T: Real> PositionalEmbedding<T> {
    pub fn new(h: Tensor<T>) -> Result<Self> {
        let dims = h.dims();
        if dims.len() != 3 || dims[1] != dims[2] || dims[1].is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "positional embedding must be channels x k x k with odd k, got dims {dims:?}"
            )));
        }
        if !h.is_finite() {
            return Err(Error::invalid("positional embedding contains non-finite values"));
        }
        Ok(PositionalEmbedding { h })
    }

    pub fn zeros(channels: usize, k: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[channels, k, k])?)
    }

    pub fn channels(&self) -> usize {
        self.h.dims()[0]
    }

    pub fn k(&self) -> usize {
        self.h.dims()[1]
    }

    pub fn table(&self) -> &Tensor<T> {
        &self.h
    }

    pub fn param_count(&self) -> usize {
        self.h.len()
    }

    /// Restricts the table to channels `[0, channels)`.
    pub fn leading_channels(&self, channels: usize) -> Result<Self> {
        Ok(PositionalEmbedding {
            h: self.h.channel_range(0, channels)?,
        })
    }
}

impl PositionalEmbedding<f32> {
    /// Truncated-normal initialization with the default parameters.
    pub fn init(channels: usize, k: usize, seed: u64) -> Result<Self> {
        Self::new(TruncNormal::default().sample(&[channels, k, k], seed)?)
    }
}

/// Per-channel constant contributed by the positional embedding:
/// `bias[c] = Σ_{i,j} w[c,i,j]·h[c,i,j]`.
pub fn posembed_bias<T: Real>(w_full: &Tensor<T>, pe: &PositionalEmbedding<T>) -> Result<Vec<f64>> {
    ensure_shape(pe.table().dims(), w_full.dims())?;
    Ok((0..pe.channels())
        .map(|c| {
            w_full
                .outer(c)
                .iter()
                .zip(pe.table().outer(c))
                .map(|(w, h)| w.to_f64() * h.to_f64())
                .sum()
        })
        .collect())
}

/// Truncated normal distribution parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncNormal {
    pub mean: f32,
    pub std: f32,
    pub lo: f32,
    pub hi: f32,
}

impl Default for TruncNormal {
    fn default() -> Self {
        TruncNormal::with_std(0.0, 0.02)
    }
}

impl TruncNormal {
    /// Bounds at two standard deviations around the mean.
    pub fn with_std(mean: f32, std: f32) -> Self {
        TruncNormal {
            mean,
            std,
            lo: mean - 2.0 * std,
            hi: mean + 2.0 * std,
        }
    }

    /// Draws i.i.d. samples by rejection; deterministic for a given seed.
    pub fn sample(&self, dims: &[usize], seed: u64) -> Result<Tensor<f32>> {
        init_trunc_normal(dims, self.mean, self.std, self.lo, self.hi, seed)
    }
}

pub fn init_trunc_normal(dims: &[usize], mean: f32, std: f32, lo: f32, hi: f32, seed: u64) -> Result<Tensor<f32>> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::invalid(format!("std must be positive, got {std}")));
    }
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::invalid(format!(
            "truncation bounds need lo < hi, got [{lo}, {hi}]"
        )));
    }
    // Rejection stalls when the window sits far in a tail.
    let z_lo = (lo as f64 - mean as f64) / std as f64;
    let z_hi = (hi as f64 - mean as f64) / std as f64;
    if z_lo > 6.0 || z_hi < -6.0 {
        return Err(Error::invalid(format!(
            "truncation window [{lo}, {hi}] has negligible mass under N({mean}, {std}²)"
        )));
    }
    let normal = Normal::new(mean as f64, std as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| loop {
        let v = normal.sample(&mut rng) as f32;
        if v >= lo && v <= hi {
            break v;
        }
    })
}

/// Adds a small odd kernel onto the central window of a large odd kernel.
///
/// A same-padded convolution with the result equals the sum of the two
/// same-padded branch convolutions.
pub fn merge_reparam<T: Real>(large: &Tensor<T>, small: &Tensor<T>) -> Result<Tensor<T>> {
    let (ld, sd) = (large.dims(), small.dims());
    if ld.len() != 3 || sd.len() != 3 || ld[1] != ld[2] || sd[1] != sd[2] {
        return Err(Error::invalid(format!(
            "merge needs square channels x k x k kernels, got {ld:?} and {sd:?}"
        )));
    }
    if ld[0] != sd[0] {
        return Err(Error::ShapeMismatch {
            expected: vec![ld[0], sd[1], sd[2]],
            actual: sd.to_vec(),
        });
    }
    let (big, ks) = (ld[1], sd[1]);
    if big % 2 == 0 || ks % 2 == 0 {
        return Err(Error::invalid(format!(
            "merge needs odd kernel sizes, got {big} and {ks}"
        )));
    }
    if ks > big {
        return Err(Error::invalid(format!(
            "small kernel {ks} is larger than large kernel {big}"
        )));
    }
    let off = (big - ks) / 2;
    let mut out = large.clone();
    for c in 0..ld[0] {
        let s = small.outer(c);
        let dst = out.outer_mut(c);
        for i in 0..ks {
            for j in 0..ks {
                let d = &mut dst[(i + off) * big + j + off];
                *d = T::from_f64(d.to_f64() + s[i * ks + j].to_f64());
            }
        }
    }
    Ok(out)
}
