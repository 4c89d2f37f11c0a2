//! Dense row-major n-dimensional arrays.

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Element type of a [`Tensor`].
///
/// Convolution kernels accumulate in `f64` regardless of the storage type, so
/// the only requirement is a lossless-enough round trip through `f64`.
pub trait Real: Copy + Default + PartialEq + PartialOrd + Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Row-major array with positive dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let len = dims.iter().product();
        Ok(Tensor {
            dims: dims.to_vec(),
            data: vec![T::default(); len],
        })
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.fill(value);
        Ok(t)
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?} (expected {len})",
                data.len(),
                dims
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> T) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        Ok(Tensor {
            dims: dims.to_vec(),
            data: (0..len).map(f).collect(),
        })
    }

    /// Standard normal samples, deterministic for a given seed.
    pub fn random_normal(dims: &[usize], seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(dims, |_| T::from_f64(StandardNormal.sample(&mut rng)))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            assert!(i < d, "index {index:?} out of bounds for dims {:?}", self.dims);
            off = off * d + i;
        }
        off
    }

    /// # Panics
    ///
    /// Panics if `index` has the wrong rank or is out of bounds.
    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Contiguous slice for the leading index `i` (e.g. one channel of a
    /// `c×h×w` tensor).
    pub fn outer(&self, i: usize) -> &[T] {
        let inner: usize = self.dims[1..].iter().product();
        &self.data[i * inner..(i + 1) * inner]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [T] {
        let inner: usize = self.dims[1..].iter().product();
        &mut self.data[i * inner..(i + 1) * inner]
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.to_f64()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor<T>) -> Result<f64> {
        crate::error::ensure_shape(&self.dims, &other.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64() * b.to_f64())
            .sum())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        crate::error::ensure_shape(&self.dims, &other.dims)?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| T::from_f64(a.to_f64() + b.to_f64()))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        self.map(|v| T::from_f64(v.to_f64() * s))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max)
    }

    /// Copies out channels `[start, end)` of a tensor whose first dimension
    /// is the channel axis.
    pub fn channel_range(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        if start >= end || end > self.dims[0] {
            return Err(Error::invalid(format!(
                "channel range {start}..{end} invalid for {} channels",
                self.dims[0]
            )));
        }
        let inner: usize = self.dims[1..].iter().product();
        let mut dims = self.dims.clone();
        dims[0] = end - start;
        Ok(Tensor {
            dims,
            data: self.data[start * inner..end * inner].to_vec(),
        })
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::invalid(format!(
            "tensor dims must be non-empty and positive, got {dims:?}"
        )));
    }
    Ok(())
}

/// Normwise relative difference `max|a-b| / max|b|`.
///
/// Falls back to the absolute difference when the reference is all zeros.
pub fn rel_error<T: Real>(actual: &Tensor<T>, expected: &Tensor<T>) -> f64 {
    assert_eq!(actual.dims(), expected.dims(), "rel_error on mismatched shapes");
    let diff = actual
        .data()
        .iter()
        .zip(expected.data())
        .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
        .fold(0.0, f64::max);
    let scale = expected.max_abs();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
