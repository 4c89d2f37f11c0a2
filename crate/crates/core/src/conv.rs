//! Depthwise 2-D convolution in dense, stripe and peripheral form.
//!
//! All forms use stride 1 and zero "same" padding, and follow the
//! cross-correlation convention: kernel tap `(i, j)` of a `kh×kw` kernel
//! reads the input at `(x + i - kh/2, y + j - kw/2)` for output `(x, y)`.
//! Inputs are `channels×H×W`, kernels `channels×kh×kw`. Every kernel
//! accumulates in `f64` and rounds once into the output element type.

use num_rational::Ratio;

use crate::error::{ensure_shape, Error, Result};
use crate::grid::SharingGrid;
use crate::kernel::{posembed_bias, scatter_grad, CompactKernel, PositionalEmbedding};
use crate::map_indices;
use crate::tensor::{Real, Tensor};

/// Kernel form of a depthwise convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvForm {
    Dense {
        k: usize,
    },
    /// Parallel `long×short` and `short×long` kernels.
    Stripe {
        long: usize,
        short: usize,
    },
    Peripheral(SharingGrid),
}

impl ConvForm {
    /// Span of the equivalent square kernel.
    pub fn kernel_size(&self) -> usize {
        match self {
            ConvForm::Dense { k } => *k,
            ConvForm::Stripe { long, .. } => *long,
            ConvForm::Peripheral(grid) => grid.k(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConvForm::Dense { .. } => "dense",
            ConvForm::Stripe { .. } => "stripe",
            ConvForm::Peripheral(_) => "peripheral",
        }
    }
}

/// Layer description: form, channel count and the fraction of channels that
/// go through the convolution branch.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub form: ConvForm,
    pub channels: usize,
    pub partial_fraction: Ratio<usize>,
}

impl ConvSpec {
    pub fn new(form: ConvForm, channels: usize) -> Result<Self> {
        Self::with_fraction(form, channels, Ratio::from_integer(1))
    }

    /// Partial layer with the default 3/8 convolved fraction.
    pub fn partial(form: ConvForm, channels: usize) -> Result<Self> {
        Self::with_fraction(form, channels, default_partial_fraction())
    }

    pub fn with_fraction(form: ConvForm, channels: usize, fraction: Ratio<usize>) -> Result<Self> {
        let spec = ConvSpec {
            form,
            channels,
            partial_fraction: fraction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.form {
            ConvForm::Dense { k } if k % 2 == 0 => {
                return Err(Error::invalid(format!("kernel size must be odd, got {k}")))
            }
            ConvForm::Stripe { long, short } if long % 2 == 0 || short % 2 == 0 => {
                return Err(Error::invalid(format!(
                    "stripe kernel sides must be odd, got {long}x{short}"
                )))
            }
            _ => {}
        }
        let f = self.partial_fraction;
        if *f.numer() == 0 || f > Ratio::from_integer(1) {
            return Err(Error::invalid(format!("partial fraction must be in (0, 1], got {f}")));
        }
        if self.conv_channels() == 0 {
            return Err(Error::invalid(format!(
                "partial fraction {f} of {} channels leaves no convolved channel",
                self.channels
            )));
        }
        Ok(())
    }

    /// Convolved channel count `g = floor(fraction · channels)`.
    pub fn conv_channels(&self) -> usize {
        (self.partial_fraction * self.channels).to_integer()
    }
}

pub fn default_partial_fraction() -> Ratio<usize> {
    Ratio::new(3, 8)
}

fn input_dims<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.dims() {
        [c, h, w] => Ok((c, h, w)),
        ref d => Err(Error::invalid(format!(
            "input must be channels x H x W, got dims {d:?}"
        ))),
    }
}

fn kernel_dims<T: Real>(w: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    let d = w.dims();
    if d.len() != 3 {
        return Err(Error::invalid(format!(
            "kernel must be channels x kh x kw, got dims {d:?}"
        )));
    }
    if d[0] != channels {
        return Err(Error::ShapeMismatch {
            expected: vec![channels, d[1], d[2]],
            actual: d.to_vec(),
        });
    }
    if d[1].is_multiple_of(2) || d[2].is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel sides must be odd, got {}x{}",
            d[1], d[2]
        )));
    }
    Ok((d[1], d[2]))
}

fn to_f64<T: Real>(s: &[T]) -> Vec<f64> {
    s.iter().map(|v| v.to_f64()).collect()
}

/// Valid output range `[lo, hi)` along an axis of length `n` for tap offset `d`.
#[inline]
fn tap_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// `out += correlate(x, kern)` for one channel.
fn correlate_into(x: &[f64], h: usize, w: usize, kern: &[f64], kh: usize, kw: usize, out: &mut [f64]) {
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    for i in 0..kh {
        let di = i as isize - rh;
        let (ylo, yhi) = tap_range(h, di);
        for j in 0..kw {
            let wv = kern[i * kw + j];
            if wv == 0.0 {
                continue;
            }
            let dj = j as isize - rw;
            let (xlo, xhi) = tap_range(w, dj);
            for oy in ylo..yhi {
                let src = &x[((oy as isize + di) as usize) * w..][..w];
                let dst = &mut out[oy * w..(oy + 1) * w];
                for ox in xlo..xhi {
                    dst[ox] += wv * src[(ox as isize + dj) as usize];
                }
            }
        }
    }
}

/// Kernel gradient for one channel: `gk[i,j] = Σ dy[o] · x[o + (i,j) - r]`.
fn kernel_grad(x: &[f64], dy: &[f64], h: usize, w: usize, kh: usize, kw: usize) -> Vec<f64> {
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut gk = vec![0.0; kh * kw];
    for i in 0..kh {
        let di = i as isize - rh;
        let (ylo, yhi) = tap_range(h, di);
        for j in 0..kw {
            let dj = j as isize - rw;
            let (xlo, xhi) = tap_range(w, dj);
            let mut acc = 0.0;
            for oy in ylo..yhi {
                let src = &x[((oy as isize + di) as usize) * w..][..w];
                let g = &dy[oy * w..(oy + 1) * w];
                for ox in xlo..xhi {
                    acc += g[ox] * src[(ox as isize + dj) as usize];
                }
            }
            gk[i * kw + j] = acc;
        }
    }
    gk
}

fn flipped(kern: &[f64]) -> Vec<f64> {
    kern.iter().rev().copied().collect()
}

fn collect_channels<T: Real>(dims: &[usize], channels: Vec<Vec<f64>>) -> Tensor<T> {
    let data = channels.into_iter().flatten().map(T::from_f64).collect();
    Tensor::from_vec(dims, data).expect("channel buffers match output dims")
}

/// Same-padded depthwise convolution with rectangular `kh×kw` kernels.
pub fn dw_forward_rect<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    forward_with_bias(x, w, None)
}

fn forward_with_bias<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&[f64]>) -> Result<Tensor<T>> {
    let (c, h, wd) = input_dims(x)?;
    let (kh, kw) = kernel_dims(w, c)?;
    let out = map_indices(c, |ch| {
        let mut acc = vec![bias.map_or(0.0, |b| b[ch]); h * wd];
        correlate_into(&to_f64(x.outer(ch)), h, wd, &to_f64(w.outer(ch)), kh, kw, &mut acc);
        acc
    });
    Ok(collect_channels(x.dims(), out))
}

fn square_kernel<T: Real>(w: &Tensor<T>) -> Result<()> {
    let d = w.dims();
    if d.len() == 3 && d[1] != d[2] {
        return Err(Error::invalid(format!(
            "expected a square kernel, got {}x{}",
            d[1], d[2]
        )));
    }
    Ok(())
}

/// Same-padded depthwise convolution with square odd `k×k` kernels.
pub fn dw_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    square_kernel(w)?;
    dw_forward_rect(x, w)
}

/// Literal positional-embedding convolution: every tap multiplies the
/// zero-padded input sample plus `h[c,i,j]`, including taps that fall in the
/// padding. Kept as the reference for the bias-precompute path.
pub fn dw_forward_posembed<T: Real>(x: &Tensor<T>, w: &Tensor<T>, pe: &PositionalEmbedding<T>) -> Result<Tensor<T>> {
    square_kernel(w)?;
    let (c, h, wd) = input_dims(x)?;
    let (k, _) = kernel_dims(w, c)?;
    ensure_shape(w.dims(), pe.table().dims())?;
    let r = (k / 2) as isize;
    let out = map_indices(c, |ch| {
        let (xs, ws, hs) = (x.outer(ch), w.outer(ch), pe.table().outer(ch));
        let mut acc = vec![0.0; h * wd];
        for oy in 0..h {
            for ox in 0..wd {
                let mut s = 0.0;
                for i in 0..k {
                    let iy = oy as isize + i as isize - r;
                    for j in 0..k {
                        let ix = ox as isize + j as isize - r;
                        let sample = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            xs[iy as usize * wd + ix as usize].to_f64()
                        } else {
                            0.0
                        };
                        s += ws[i * k + j].to_f64() * (sample + hs[i * k + j].to_f64());
                    }
                }
                acc[oy * wd + ox] = s;
            }
        }
        acc
    });
    Ok(collect_channels(x.dims(), out))
}

/// Gradients of `⟨dy, dw_forward_rect(x, w)⟩` with respect to `x` and `w`.
pub fn dw_backward_rect<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, wd) = input_dims(x)?;
    let (kh, kw) = kernel_dims(w, c)?;
    ensure_shape(x.dims(), dy.dims())?;
    let grads = map_indices(c, |ch| {
        let xs = to_f64(x.outer(ch));
        let gs = to_f64(dy.outer(ch));
        let ks = to_f64(w.outer(ch));
        let mut dx = vec![0.0; h * wd];
        correlate_into(&gs, h, wd, &flipped(&ks), kh, kw, &mut dx);
        (dx, kernel_grad(&xs, &gs, h, wd, kh, kw))
    });
    let (dx, dw): (Vec<_>, Vec<_>) = grads.into_iter().unzip();
    Ok((collect_channels(x.dims(), dx), collect_channels(w.dims(), dw)))
}

/// Input gradient only: correlation of `dy` with the flipped kernel.
pub fn dw_backward_input<T: Real>(w: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, wd) = input_dims(dy)?;
    let (kh, kw) = kernel_dims(w, c)?;
    let out = map_indices(c, |ch| {
        let mut dx = vec![0.0; h * wd];
        correlate_into(
            &to_f64(dy.outer(ch)),
            h,
            wd,
            &flipped(&to_f64(w.outer(ch))),
            kh,
            kw,
            &mut dx,
        );
        dx
    });
    Ok(collect_channels(dy.dims(), out))
}

/// Gradients of `⟨dy, dw_forward(x, w)⟩`: `(dx, dw_full)`.
pub fn dw_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    square_kernel(w)?;
    dw_backward_rect(x, w, dy)
}

fn check_peripheral<T: Real>(x: &Tensor<T>, ck: &CompactKernel<T>, pe: Option<&PositionalEmbedding<T>>) -> Result<()> {
    let (c, _, _) = input_dims(x)?;
    if ck.channels() != c {
        return Err(Error::ShapeMismatch {
            expected: vec![c, ck.grid().k_prime(), ck.grid().k_prime()],
            actual: ck.weights().dims().to_vec(),
        });
    }
    if let Some(pe) = pe {
        let k = ck.grid().k();
        ensure_shape(&[c, k, k], pe.table().dims())?;
    }
    Ok(())
}

/// Peripheral convolution: expands the compact kernel and folds the
/// positional embedding into a per-channel bias.
///
/// Equal to `dw_forward_posembed(x, expand(ck), pe)` (or `dw_forward` when
/// `pe` is `None`).
pub fn peripheral_forward<T: Real>(
    x: &Tensor<T>,
    ck: &CompactKernel<T>,
    pe: Option<&PositionalEmbedding<T>>,
) -> Result<Tensor<T>> {
    check_peripheral(x, ck, pe)?;
    let full = ck.expand();
    match pe {
        Some(pe) => {
            let bias = posembed_bias(&full, pe)?;
            forward_with_bias(x, &full, Some(&bias))
        }
        None => forward_with_bias(x, &full, None),
    }
}

/// Gradients of a peripheral convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PeripheralGrads<T: Real = f32> {
    pub dx: Tensor<T>,
    pub dw_compact: Tensor<T>,
    /// Present when the forward pass used a positional embedding.
    pub dh: Option<Tensor<T>>,
}

pub fn peripheral_backward<T: Real>(
    x: &Tensor<T>,
    ck: &CompactKernel<T>,
    pe: Option<&PositionalEmbedding<T>>,
    dy: &Tensor<T>,
) -> Result<PeripheralGrads<T>> {
    check_peripheral(x, ck, pe)?;
    let full = ck.expand();
    let (dx, dw_full) = dw_backward(x, &full, dy)?;
    let Some(pe) = pe else {
        return Ok(PeripheralGrads {
            dx,
            dw_compact: scatter_grad(&dw_full, ck.grid())?,
            dh: None,
        });
    };

    // The embedding adds Σ w·h to every output, so each tap sees Σ dy.
    let dy_sum: Vec<f64> = (0..dy.dims()[0])
        .map(|c| dy.outer(c).iter().map(|v| v.to_f64()).sum())
        .collect();
    let k2 = ck.grid().k() * ck.grid().k();
    let mut dw_total = dw_full;
    let mut dh = Tensor::zeros(pe.table().dims())?;
    for (c, &s) in dy_sum.iter().enumerate() {
        let (h, w) = (pe.table().outer(c), full.outer(c));
        let g = dw_total.outer_mut(c);
        for t in 0..k2 {
            g[t] = T::from_f64(g[t].to_f64() + h[t].to_f64() * s);
        }
        for (d, wv) in dh.outer_mut(c).iter_mut().zip(w) {
            *d = T::from_f64(wv.to_f64() * s);
        }
    }
    Ok(PeripheralGrads {
        dx,
        dw_compact: scatter_grad(&dw_total, ck.grid())?,
        dh: Some(dh),
    })
}

/// Stripe convolution: sum of a `K×N` and an `N×K` depthwise branch.
pub fn stripe_forward<T: Real>(x: &Tensor<T>, w_v: &Tensor<T>, w_h: &Tensor<T>) -> Result<Tensor<T>> {
    check_stripe(w_v, w_h)?;
    let (c, h, wd) = input_dims(x)?;
    let (kv_h, kv_w) = kernel_dims(w_v, c)?;
    let (kh_h, kh_w) = kernel_dims(w_h, c)?;
    let out = map_indices(c, |ch| {
        let xs = to_f64(x.outer(ch));
        let mut acc = vec![0.0; h * wd];
        correlate_into(&xs, h, wd, &to_f64(w_v.outer(ch)), kv_h, kv_w, &mut acc);
        correlate_into(&xs, h, wd, &to_f64(w_h.outer(ch)), kh_h, kh_w, &mut acc);
        acc
    });
    Ok(collect_channels(x.dims(), out))
}

/// Gradients of a stripe convolution: `(dx, dw_v, dw_h)`.
pub fn stripe_backward<T: Real>(
    x: &Tensor<T>,
    w_v: &Tensor<T>,
    w_h: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    check_stripe(w_v, w_h)?;
    let (dx_v, dw_v) = dw_backward_rect(x, w_v, dy)?;
    let (dx_h, dw_h) = dw_backward_rect(x, w_h, dy)?;
    Ok((dx_v.add(&dx_h)?, dw_v, dw_h))
}

fn check_stripe<T: Real>(w_v: &Tensor<T>, w_h: &Tensor<T>) -> Result<()> {
    let (v, hz) = (w_v.dims(), w_h.dims());
    if v.len() != 3 || hz.len() != 3 {
        return Err(Error::invalid(
            "stripe kernels must be channels x K x N and channels x N x K",
        ));
    }
    ensure_shape(&[v[0], v[2], v[1]], hz)
}

/// Partial peripheral convolution: the first `g` channels go through the
/// peripheral convolution, the remaining channels are copied unchanged.
pub fn partial_forward<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    ck: &CompactKernel<T>,
    pe: Option<&PositionalEmbedding<T>>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let (c, _, _) = input_dims(x)?;
    if c != spec.channels {
        return Err(Error::invalid(format!(
            "input has {c} channels but the layer expects {}",
            spec.channels
        )));
    }
    let g = spec.conv_channels();
    if ck.channels() != g {
        return Err(Error::invalid(format!(
            "compact kernel has {} channels but the convolution branch has {g}",
            ck.channels()
        )));
    }
    let conv = peripheral_forward(&x.channel_range(0, g)?, ck, pe)?;
    if g == c {
        return Ok(conv);
    }
    let inner = x.len() / c;
    let mut out = x.clone();
    out.data_mut()[..g * inner].copy_from_slice(conv.data());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_custom_grid, build_grid};

    fn pseudo(dims: &[usize], seed: f32) -> Tensor<f32> {
        Tensor::from_fn(dims, |i| ((i as f32 + seed) * 0.713).sin()).unwrap()
    }

    fn delta(c: usize, k: usize) -> Tensor<f32> {
        let mut w = Tensor::zeros(&[c, k, k]).unwrap();
        for ch in 0..c {
            w.set(&[ch, k / 2, k / 2], 1.0);
        }
        w
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = pseudo(&[2, 9, 7], 0.0);
        assert_eq!(dw_forward(&x, &delta(2, 5)).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_in_bounds_taps() {
        let x = Tensor::full(&[1, 6, 6], 1.0f32).unwrap();
        let w = Tensor::full(&[1, 3, 3], 1.0f32).unwrap();
        let y = dw_forward(&x, &w).unwrap();
        assert_eq!(y.get(&[0, 2, 3]), 9.0);
        assert_eq!(y.get(&[0, 0, 0]), 4.0);
        assert_eq!(y.get(&[0, 0, 3]), 6.0);
    }

    #[test]
    fn orientation_is_cross_correlation() {
        let mut x = Tensor::<f32>::zeros(&[1, 5, 5]).unwrap();
        x.set(&[0, 2, 3], 1.0);
        let mut w = Tensor::<f32>::zeros(&[1, 3, 3]).unwrap();
        w.set(&[0, 1, 2], 1.0); // reads one column to the right
        let y = dw_forward(&x, &w).unwrap();
        assert_eq!(y.get(&[0, 2, 2]), 1.0);
        assert_eq!(y.get(&[0, 2, 4]), 0.0);
    }

    #[test]
    fn kernel_larger_than_image() {
        let x = pseudo(&[1, 3, 4], 1.0);
        let w = pseudo(&[1, 13, 13], 2.0);
        let y = dw_forward(&x, &w).unwrap();
        // every input pixel is within reach of every output pixel
        let v: f32 = (0..3)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| w.get(&[0, i + 6, j + 6]) * x.get(&[0, i, j]))
            .sum();
        assert!((y.get(&[0, 0, 0]) - v).abs() < 1e-5);
    }

    #[test]
    fn shape_errors() {
        let x = pseudo(&[2, 8, 8], 0.0);
        assert!(dw_forward(&x, &pseudo(&[2, 4, 4], 0.0)).is_err());
        assert!(dw_forward(&x, &pseudo(&[3, 3, 3], 0.0)).is_err());
        assert!(dw_forward(&x, &pseudo(&[2, 3, 5], 0.0)).is_err());
        assert!(dw_forward(&pseudo(&[8, 8], 0.0), &pseudo(&[2, 3, 3], 0.0)).is_err());
        assert!(dw_backward(&x, &pseudo(&[2, 3, 3], 0.0), &pseudo(&[2, 8, 7], 0.0)).is_err());
    }

    #[test]
    fn backward_trivial_cases() {
        let x = pseudo(&[2, 6, 6], 0.0);
        let w = pseudo(&[2, 3, 3], 1.0);
        let (dx, dw) = dw_backward(&x, &w, &Tensor::zeros(&[2, 6, 6]).unwrap()).unwrap();
        assert!(dx.data().iter().chain(dw.data()).all(|&v| v == 0.0));

        let dy = pseudo(&[2, 6, 6], 3.0);
        let (dx, _) = dw_backward(&x, &delta(2, 3), &dy).unwrap();
        assert_eq!(dx, dy);
    }

    #[test]
    fn posembed_reduces_to_plain_and_to_center_bias() {
        let x = pseudo(&[2, 7, 7], 0.0);
        let w = pseudo(&[2, 5, 5], 1.0);
        let zero = PositionalEmbedding::zeros(2, 5).unwrap();
        assert_eq!(dw_forward_posembed(&x, &w, &zero).unwrap(), dw_forward(&x, &w).unwrap());

        let pe = PositionalEmbedding::new(pseudo(&[2, 5, 5], 9.0)).unwrap();
        let y = dw_forward_posembed(&Tensor::zeros(&[2, 7, 7]).unwrap(), &delta(2, 5), &pe).unwrap();
        for c in 0..2 {
            let hc = pe.table().get(&[c, 2, 2]);
            assert!(y.outer(c).iter().all(|&v| v == hc));
        }
    }

    #[test]
    fn peripheral_identity_grid_equals_dense() {
        let grid = build_grid(7, 3, 2).unwrap();
        let w = pseudo(&[2, 7, 7], 4.0);
        let ck = CompactKernel::new(grid, w.clone()).unwrap();
        let x = pseudo(&[2, 10, 10], 0.0);
        assert_eq!(peripheral_forward(&x, &ck, None).unwrap(), dw_forward(&x, &w).unwrap());
    }

    #[test]
    fn peripheral_matches_manual_expansion() {
        let grid = build_custom_grid(&[2, 1]).unwrap();
        let ck = CompactKernel::new(grid, pseudo(&[1, 3, 3], 2.0)).unwrap();
        let mut manual = Tensor::<f32>::zeros(&[1, 5, 5]).unwrap();
        let cells = [0, 0, 1, 2, 2];
        for x in 0..5 {
            for y in 0..5 {
                manual.set(&[0, x, y], ck.weights().get(&[0, cells[x], cells[y]]));
            }
        }
        let x = pseudo(&[1, 8, 8], 5.0);
        assert_eq!(
            peripheral_forward(&x, &ck, None).unwrap(),
            dw_forward(&x, &manual).unwrap()
        );
    }

    #[test]
    fn peripheral_backward_trivial_cases() {
        let grid = build_grid(7, 3, 2).unwrap();
        let ck = CompactKernel::new(grid, pseudo(&[2, 7, 7], 1.0)).unwrap();
        let pe = PositionalEmbedding::new(pseudo(&[2, 7, 7], 2.0)).unwrap();
        let x = pseudo(&[2, 9, 9], 3.0);

        let g = peripheral_backward(&x, &ck, Some(&pe), &Tensor::zeros(&[2, 9, 9]).unwrap()).unwrap();
        assert!(g.dx.data().iter().chain(g.dw_compact.data()).all(|&v| v == 0.0));
        assert!(g.dh.unwrap().data().iter().all(|&v| v == 0.0));

        let dy = pseudo(&[2, 9, 9], 4.0);
        let g = peripheral_backward(&x, &ck, None, &dy).unwrap();
        let (_, dw_full) = dw_backward(&x, &ck.expand(), &dy).unwrap();
        assert_eq!(g.dw_compact, dw_full);
        assert!(g.dh.is_none());
    }

    #[test]
    fn stripe_special_cases() {
        let x = pseudo(&[2, 9, 9], 0.0);
        let w_v = pseudo(&[2, 7, 3], 1.0);
        let zero_h = Tensor::zeros(&[2, 3, 7]).unwrap();
        assert_eq!(
            stripe_forward(&x, &w_v, &zero_h).unwrap(),
            dw_forward_rect(&x, &w_v).unwrap()
        );

        let a = pseudo(&[2, 5, 5], 2.0);
        let b = pseudo(&[2, 5, 5], 3.0);
        let y = stripe_forward(&x, &a, &b).unwrap();
        let dense = dw_forward(&x, &a.add(&b).unwrap()).unwrap();
        assert!(crate::tensor::rel_error(&y, &dense) < 1e-6);

        assert!(stripe_forward(&x, &w_v, &pseudo(&[2, 7, 3], 0.0)).is_err());
    }

    #[test]
    fn partial_split_and_copy() {
        let spec = ConvSpec::partial(ConvForm::Peripheral(build_grid(13, 2, 2).unwrap()), 8).unwrap();
        assert_eq!(spec.conv_channels(), 3);
        let ck = CompactKernel::new(build_grid(13, 2, 2).unwrap(), pseudo(&[3, 9, 9], 1.0)).unwrap();
        let x = pseudo(&[8, 12, 12], 0.0);
        let y = partial_forward(&x, &spec, &ck, None).unwrap();
        let conv = peripheral_forward(&x.channel_range(0, 3).unwrap(), &ck, None).unwrap();
        assert_eq!(y.channel_range(0, 3).unwrap(), conv);
        for c in 3..8 {
            let a: Vec<u32> = y.outer(c).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = x.outer(c).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn partial_validation() {
        let form = ConvForm::Dense { k: 3 };
        assert!(ConvSpec::partial(form.clone(), 2).is_err()); // floor(6/8) = 0
        assert!(ConvSpec::with_fraction(form.clone(), 8, Ratio::new(0, 1)).is_err());
        assert!(ConvSpec::with_fraction(form.clone(), 8, Ratio::new(9, 8)).is_err());
        assert!(ConvSpec::new(ConvForm::Dense { k: 4 }, 8).is_err());
        assert_eq!(ConvSpec::partial(form, 13).unwrap().conv_channels(), 4);

        let grid = build_grid(5, 1, 2).unwrap();
        let spec = ConvSpec::partial(ConvForm::Peripheral(grid.clone()), 8).unwrap();
        let ck = CompactKernel::new(grid, pseudo(&[4, 5, 5], 0.0)).unwrap();
        assert!(partial_forward(&pseudo(&[8, 6, 6], 0.0), &spec, &ck, None).is_err());
        assert!(partial_forward(&pseudo(&[7, 6, 6], 0.0), &spec, &ck, None).is_err());
    }
}
