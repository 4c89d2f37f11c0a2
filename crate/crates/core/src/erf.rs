//! Effective receptive field: input-gradient contribution maps and the
//! high-contribution area ratio.
//!
//! The contribution of an input pixel is the absolute gradient of the
//! channel-summed central output activation with respect to that pixel,
//! accumulated over input channels and random input samples.
//!
//! Networks built from an [`ArchConfig`] keep only what shapes the receptive
//! field: a fixed patchify stem (average pooling), residual blocks
//! `x + relu(conv(x))` on the convolved channels, and 2×2 average-pool
//! downsamplers between stages. Channel mixing is not modeled, so a small
//! channel count stands in for the stage widths.

use crate::arch::{ArchConfig, ArchForm};
use crate::conv::{dw_backward_input, dw_forward, peripheral_forward, stripe_forward};
use crate::error::{Error, Result};
use crate::grid::build_grid;
use crate::kernel::{init_trunc_normal, CompactKernel, PositionalEmbedding, TruncNormal};
use crate::map_indices;
use crate::tensor::Tensor;

/// Depthwise kernel of one block.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockKernel {
    Dense(Tensor),
    Stripe { vertical: Tensor, horizontal: Tensor },
    Peripheral(CompactKernel),
}

impl BlockKernel {
    fn channels(&self) -> usize {
        match self {
            BlockKernel::Dense(w) => w.dims()[0],
            BlockKernel::Stripe { vertical, .. } => vertical.dims()[0],
            BlockKernel::Peripheral(ck) => ck.channels(),
        }
    }

    fn forward(&self, x: &Tensor, pe: Option<&PositionalEmbedding>) -> Result<Tensor> {
        match self {
            BlockKernel::Dense(w) => dw_forward(x, w),
            BlockKernel::Stripe { vertical, horizontal } => stripe_forward(x, vertical, horizontal),
            BlockKernel::Peripheral(ck) => peripheral_forward(x, ck, pe),
        }
    }

    fn backward_input(&self, dy: &Tensor) -> Result<Tensor> {
        match self {
            BlockKernel::Dense(w) => dw_backward_input(w, dy),
            BlockKernel::Stripe { vertical, horizontal } => {
                dw_backward_input(vertical, dy)?.add(&dw_backward_input(horizontal, dy)?)
            }
            BlockKernel::Peripheral(ck) => dw_backward_input(&ck.expand(), dy),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErfBlock {
    pub kernel: BlockKernel,
    /// `x + f(conv(x))` instead of `f(conv(x))` on the convolved channels.
    pub residual: bool,
    pub relu: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErfStage {
    /// 2×2 average pooling before the first block.
    pub downsample: bool,
    /// Shared by every peripheral block of the stage.
    pub posembed: Option<PositionalEmbedding>,
    pub blocks: Vec<ErfBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErfNetwork {
    channels: usize,
    stem_stride: usize,
    stages: Vec<ErfStage>,
}

/// Settings for building an ERF network from an architecture config.
#[derive(Clone, Debug, PartialEq)]
pub struct ErfOptions {
    pub channels: usize,
    /// Caps the block count of every stage.
    pub max_blocks_per_stage: Option<usize>,
}

impl Default for ErfOptions {
    fn default() -> Self {
        ErfOptions {
            channels: 8,
            max_blocks_per_stage: None,
        }
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn random_kernel(dims: &[usize], taps: usize, seed: u64) -> Result<Tensor> {
    let std = 1.0 / (taps as f32).sqrt();
    init_trunc_normal(dims, 0.0, std, -2.0 * std, 2.0 * std, seed)
}

impl ErfNetwork {
    pub fn new(channels: usize, stem_stride: usize, stages: Vec<ErfStage>) -> Result<Self> {
        if channels == 0 || stem_stride == 0 {
            return Err(Error::invalid("network needs positive channels and stem stride"));
        }
        for stage in &stages {
            for block in &stage.blocks {
                if block.kernel.channels() > channels {
                    return Err(Error::invalid(format!(
                        "block convolves {} channels but the network has {channels}",
                        block.kernel.channels()
                    )));
                }
                if let (BlockKernel::Peripheral(ck), Some(pe)) = (&block.kernel, &stage.posembed) {
                    if pe.channels() != ck.channels() || pe.k() != ck.grid().k() {
                        return Err(Error::invalid(
                            "stage positional embedding does not match its peripheral kernels",
                        ));
                    }
                }
            }
        }
        Ok(ErfNetwork {
            channels,
            stem_stride,
            stages,
        })
    }

    /// Plain stack of convolutions at full resolution, no residuals or
    /// activations. The support of its contribution map is the composed
    /// kernel footprint.
    pub fn stack(kernels: Vec<BlockKernel>) -> Result<Self> {
        let channels = kernels
            .first()
            .map(BlockKernel::channels)
            .ok_or_else(|| Error::invalid("empty layer stack"))?;
        let blocks = kernels
            .into_iter()
            .map(|kernel| ErfBlock {
                kernel,
                residual: false,
                relu: false,
            })
            .collect();
        Self::new(
            channels,
            1,
            vec![ErfStage {
                downsample: false,
                posembed: None,
                blocks,
            }],
        )
    }

    /// Randomly initialized network following the stage layout of `cfg`.
    pub fn from_config(cfg: &ArchConfig, opts: &ErfOptions, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = opts.channels;
        let g = (cfg.partial_fraction * c).to_integer();
        if g == 0 {
            return Err(Error::invalid(format!(
                "{c} ERF channels leave no convolved channel at fraction {}",
                cfg.partial_fraction
            )));
        }
        let mut stream = 0u64;
        let mut next_seed = || {
            stream += 1;
            derive_seed(seed, stream)
        };
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let k = cfg.kernels[s];
            let depth = opts
                .max_blocks_per_stage
                .map_or(cfg.depths[s], |m| m.min(cfg.depths[s]));
            let posembed = if cfg.form == ArchForm::Peripheral && cfg.posembed_per_stage {
                Some(PositionalEmbedding::new(
                    TruncNormal::default().sample(&[g, k, k], next_seed())?,
                )?)
            } else {
                None
            };
            let mut blocks = Vec::with_capacity(depth);
            for _ in 0..depth {
                let kernel = match cfg.form {
                    ArchForm::Dense => BlockKernel::Dense(random_kernel(&[g, k, k], k * k, next_seed())?),
                    ArchForm::Stripe { short } => BlockKernel::Stripe {
                        vertical: random_kernel(&[g, k, short], 2 * k * short, next_seed())?,
                        horizontal: random_kernel(&[g, short, k], 2 * k * short, next_seed())?,
                    },
                    ArchForm::Peripheral => {
                        let grid = build_grid(k, (cfg.central - 1) / 2, 2)?;
                        let kp = grid.k_prime();
                        let w = random_kernel(&[g, kp, kp], k * k, next_seed())?;
                        BlockKernel::Peripheral(CompactKernel::new(grid, w)?)
                    }
                };
                blocks.push(ErfBlock {
                    kernel,
                    residual: true,
                    relu: true,
                });
            }
            stages.push(ErfStage {
                downsample: s > 0,
                posembed,
                blocks,
            });
        }
        Self::new(c, 4, stages)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total spatial reduction from input to output.
    pub fn stride(&self) -> usize {
        let pools = self.stages.iter().filter(|s| s.downsample).count() as u32;
        self.stem_stride * 2usize.pow(pools)
    }

    fn check_side(&self, side: usize) -> Result<()> {
        let stride = self.stride();
        if side == 0 || !side.is_multiple_of(stride) {
            return Err(Error::invalid(format!(
                "side {side} must be a positive multiple of the network stride {stride}"
            )));
        }
        Ok(())
    }

    /// Input gradient of the channel-summed central output activation.
    pub fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
        let [c, h, w] = *x.dims() else {
            return Err(Error::invalid("input must be channels x H x W"));
        };
        if c != self.channels || h != w {
            return Err(Error::invalid(format!(
                "input must be {0} x side x side, got {c}x{h}x{w}",
                self.channels
            )));
        }
        self.check_side(h)?;

        // forward, keeping each block's input and pre-activation
        let mut tape: Vec<(Tensor, Option<Tensor>)> = Vec::new();
        let mut cur = avg_pool(x, self.stem_stride)?;
        for stage in &self.stages {
            if stage.downsample {
                cur = avg_pool(&cur, 2)?;
            }
            for block in &stage.blocks {
                let g = block.kernel.channels();
                let z = block
                    .kernel
                    .forward(&cur.channel_range(0, g)?, stage.posembed.as_ref())?;
                let a = if block.relu { z.map(|v| v.max(0.0)) } else { z.clone() };
                let mut next = cur.clone();
                let inner = cur.len() / self.channels;
                for (o, (&av, &xv)) in next.data_mut()[..g * inner]
                    .iter_mut()
                    .zip(a.data().iter().zip(&cur.data()[..g * inner]))
                {
                    *o = if block.residual { xv + av } else { av };
                }
                tape.push((cur, block.relu.then_some(z)));
                cur = next;
            }
        }

        let [_, fh, fw] = *cur.dims() else { unreachable!() };
        let mut grad = Tensor::zeros(cur.dims())?;
        for ch in 0..self.channels {
            grad.set(&[ch, fh / 2, fw / 2], 1.0);
        }

        let mut tape = tape.into_iter().rev();
        for stage in self.stages.iter().rev() {
            for block in stage.blocks.iter().rev() {
                let (_, z) = tape.next().expect("one tape entry per block");
                let g = block.kernel.channels();
                let inner = grad.len() / self.channels;
                let mut dz = grad.channel_range(0, g)?;
                if let Some(z) = z {
                    for (d, &zv) in dz.data_mut().iter_mut().zip(z.data()) {
                        if zv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                let dx_conv = block.kernel.backward_input(&dz)?;
                for (o, &v) in grad.data_mut()[..g * inner].iter_mut().zip(dx_conv.data()) {
                    *o = if block.residual { *o + v } else { v };
                }
            }
            if stage.downsample {
                grad = avg_pool_backward(&grad, 2)?;
            }
        }
        avg_pool_backward(&grad, self.stem_stride)
    }

    /// Accumulates `|input gradient|` over channels and `n_samples` standard
    /// normal inputs.
    pub fn contribution_map(&self, side: usize, n_samples: usize, seed: u64) -> Result<ContributionMap> {
        self.check_side(side)?;
        if n_samples == 0 {
            return Err(Error::invalid("need at least one input sample"));
        }
        let c = self.channels;
        let per_sample = map_indices(n_samples, |i| -> Result<Vec<f64>> {
            let x = Tensor::random_normal(&[c, side, side], derive_seed(seed, 1 << 32 | i as u64))?;
            let g = self.input_gradient(&x)?;
            let mut acc = vec![0.0f64; side * side];
            for ch in 0..c {
                for (a, v) in acc.iter_mut().zip(g.outer(ch)) {
                    *a += v.abs() as f64;
                }
            }
            Ok(acc)
        });
        let mut total = vec![0.0f64; side * side];
        for sample in per_sample {
            for (t, v) in total.iter_mut().zip(sample?) {
                *t += v;
            }
        }
        ContributionMap::new(Tensor::from_vec(
            &[side, side],
            total.into_iter().map(|v| v as f32).collect(),
        )?)
    }
}

fn avg_pool(x: &Tensor, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let [c, h, w] = *x.dims() else { unreachable!() };
    let (oh, ow) = (h / stride, w / stride);
    let norm = 1.0 / (stride * stride) as f64;
    let mut out = Tensor::zeros(&[c, oh, ow])?;
    for ch in 0..c {
        let src = x.outer(ch);
        for (o, v) in out.outer_mut(ch).iter_mut().enumerate() {
            let (oy, ox) = (o / ow, o % ow);
            let mut s = 0.0f64;
            for dy in 0..stride {
                for dx in 0..stride {
                    s += src[(oy * stride + dy) * w + ox * stride + dx] as f64;
                }
            }
            *v = (s * norm) as f32;
        }
    }
    Ok(out)
}

fn avg_pool_backward(g: &Tensor, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(g.clone());
    }
    let [c, oh, ow] = *g.dims() else { unreachable!() };
    let (h, w) = (oh * stride, ow * stride);
    let norm = 1.0 / (stride * stride) as f32;
    let mut out = Tensor::zeros(&[c, h, w])?;
    for ch in 0..c {
        let src = g.outer(ch);
        for (i, v) in out.outer_mut(ch).iter_mut().enumerate() {
            *v = src[(i / w / stride) * ow + (i % w) / stride] * norm;
        }
    }
    Ok(out)
}

/// Contribution map of a randomly initialized network built from `cfg`
/// with default [`ErfOptions`].
pub fn contribution_map(cfg: &ArchConfig, seed: u64, n_samples: usize, side: usize) -> Result<ContributionMap> {
    ErfNetwork::from_config(cfg, &ErfOptions::default(), seed)?.contribution_map(side, n_samples, seed)
}

/// Square map of non-negative contribution scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMap {
    scores: Tensor,
}

impl ContributionMap {
    /// Accepts `side×side` or `1×side×side` tensors of finite, non-negative
    /// scores.
    pub fn new(scores: Tensor) -> Result<Self> {
        let scores = match *scores.dims() {
            [h, w] if h == w => scores,
            [1, h, w] if h == w => Tensor::from_vec(&[h, w], scores.into_data())?,
            ref d => {
                return Err(Error::invalid(format!(
                    "contribution map must be square, got dims {d:?}"
                )))
            }
        };
        if scores.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("contribution scores must be finite and non-negative"));
        }
        Ok(ContributionMap { scores })
    }

    pub fn side(&self) -> usize {
        self.scores.dims()[0]
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    pub fn total(&self) -> f64 {
        self.scores.data().iter().map(|&v| v as f64).sum()
    }

    /// Positions with a non-zero score.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let side = self.side();
        self.scores
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| (i / side, i % side))
            .collect()
    }

    /// Smallest `[lo, hi]` row/column box containing every non-zero score.
    pub fn support_bounds(&self) -> Option<((usize, usize), (usize, usize))> {
        let s = self.support();
        let rows = s.iter().map(|p| p.0);
        let cols = s.iter().map(|p| p.1);
        Some(((rows.clone().min()?, rows.max()?), (cols.clone().min()?, cols.max()?)))
    }

    pub fn center(&self) -> usize {
        self.side() / 2
    }
}

/// Result of an area-ratio query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AreaRatio {
    pub t: f64,
    /// Odd side of the centered square.
    pub side: usize,
    /// Covered area over map area.
    pub r: f64,
}

/// Smallest centered odd square whose score mass reaches `t` of the total;
/// `r` is its area (clipped to the map) over the map area.
pub fn area_ratio(map: &ContributionMap, t: f64) -> Result<AreaRatio> {
    Ok(area_ratios(map, &[t])?[0])
}

/// [`area_ratio`] for several thresholds sharing one prefix-sum pass.
pub fn area_ratios(map: &ContributionMap, thresholds: &[f64]) -> Result<Vec<AreaRatio>> {
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::invalid(format!("threshold {t} outside (0, 1]")));
    }
    let n = map.side();
    let mut prefix = vec![0.0f64; (n + 1) * (n + 1)];
    for i in 0..n {
        let row = &map.scores.data()[i * n..(i + 1) * n];
        let mut run = 0.0;
        for j in 0..n {
            run += row[j] as f64;
            prefix[(i + 1) * (n + 1) + j + 1] = prefix[i * (n + 1) + j + 1] + run;
        }
    }
    let total = prefix[(n + 1) * (n + 1) - 1];
    if total <= 0.0 {
        return Err(Error::invalid("contribution map has zero total score"));
    }
    let c = map.center();
    let window = |half: usize| {
        let (lo, hi) = (c.saturating_sub(half), (c + half + 1).min(n));
        let at = |i: usize, j: usize| prefix[i * (n + 1) + j];
        let mass = at(hi, hi) - at(lo, hi) - at(hi, lo) + at(lo, lo);
        (mass, (hi - lo) * (hi - lo))
    };
    let full_half = c.max(n - 1 - c);
    thresholds
        .iter()
        .map(|&t| {
            let target = t * total;
            let mut half = 0;
            loop {
                let (mass, area) = window(half);
                if mass >= target || half >= full_half {
                    return Ok(AreaRatio {
                        t,
                        side: 2 * half + 1,
                        r: area as f64 / (n * n) as f64,
                    });
                }
                half += 1;
            }
        })
        .collect()
}

pub fn area_ratios_to_csv(rows: &[AreaRatio]) -> String {
    let mut out = String::from("t,R,r\n");
    for a in rows {
        out.push_str(&format!("{},{},{}\n", a.t, a.side, a.r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::preset;

    fn kernel(c: usize, k: usize, seed: u64) -> Tensor {
        random_kernel(&[c, k, k], k * k, seed).unwrap()
    }

    fn map_from(side: usize, f: impl Fn(usize, usize) -> f32) -> ContributionMap {
        ContributionMap::new(Tensor::from_fn(&[side, side], |i| f(i / side, i % side)).unwrap()).unwrap()
    }

    #[test]
    fn single_conv_support_is_kernel_window() {
        let net = ErfNetwork::stack(vec![BlockKernel::Dense(kernel(2, 3, 1))]).unwrap();
        let map = net.contribution_map(16, 2, 0).unwrap();
        assert_eq!(map.support_bounds(), Some(((7, 9), (7, 9))));
    }

    #[test]
    fn two_convs_compose_support() {
        let net = ErfNetwork::stack(vec![
            BlockKernel::Dense(kernel(2, 3, 1)),
            BlockKernel::Dense(kernel(2, 3, 2)),
        ])
        .unwrap();
        let map = net.contribution_map(16, 1, 0).unwrap();
        assert_eq!(map.support_bounds(), Some(((6, 10), (6, 10))));
        assert_eq!(map.support().len(), 25);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        // linear stack: gradient is exact and input independent
        let net = ErfNetwork::stack(vec![BlockKernel::Dense(kernel(1, 3, 5))]).unwrap();
        let x = Tensor::from_fn(&[1, 8, 8], |i| (i as f32 * 0.3).cos()).unwrap();
        let g = net.input_gradient(&x).unwrap();
        let w = kernel(1, 3, 5);
        // d out[4,4] / d x[3,5] = w[0, 0, 2]
        assert!((g.get(&[0, 3, 5]) - w.get(&[0, 0, 2])).abs() < 1e-7);
        assert_eq!(g.get(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn config_network_runs_and_is_deterministic() {
        let cfg = preset("pelk-t").unwrap().with_uniform_kernel(7);
        let opts = ErfOptions {
            channels: 8,
            max_blocks_per_stage: Some(1),
        };
        let net = ErfNetwork::from_config(&cfg, &opts, 3).unwrap();
        assert_eq!(net.stride(), 32);
        let a = net.contribution_map(64, 2, 9).unwrap();
        let b = net.contribution_map(64, 2, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.total() > 0.0);
        assert!(net.contribution_map(48, 1, 0).is_err());
    }

    #[test]
    fn area_ratio_uniform() {
        let side = 101;
        let map = map_from(side, |_, _| 1.0);
        for t in [0.2, 0.25, 0.3, 0.5] {
            let a = area_ratio(&map, t).unwrap();
            let inner = ((a.side - 2) as f64 / side as f64).powi(2);
            assert!(inner < t && t <= a.r, "t={t} a={a:?}");
        }
    }

    #[test]
    fn area_ratio_delta_and_full() {
        let map = map_from(64, |i, j| if (i, j) == (32, 32) { 5.0 } else { 0.0 });
        for t in [0.1, 0.5, 1.0] {
            let a = area_ratio(&map, t).unwrap();
            assert_eq!((a.side, a.r), (1, 1.0 / 4096.0));
        }
        let corner = map_from(64, |i, j| if (i, j) == (0, 0) { 1.0 } else { 0.0 });
        assert_eq!(area_ratio(&corner, 1.0).unwrap().r, 1.0);
    }

    #[test]
    fn area_ratio_central_block() {
        let map = map_from(1024, |i, j| {
            if (256..768).contains(&i) && (256..768).contains(&j) {
                1.0
            } else {
                0.0
            }
        });
        let a = area_ratio(&map, 0.5).unwrap();
        assert!(a.side <= 363, "{a:?}");
        assert!(a.r <= 0.126);
    }

    #[test]
    fn area_ratio_rejects_bad_input() {
        let map = map_from(8, |_, _| 1.0);
        assert!(area_ratio(&map, 0.0).is_err());
        assert!(area_ratio(&map, 1.5).is_err());
        assert!(area_ratio(&map_from(8, |_, _| 0.0), 0.5).is_err());
        assert!(ContributionMap::new(Tensor::full(&[4, 5], 1.0).unwrap()).is_err());
        assert!(ContributionMap::new(Tensor::full(&[4, 4], -1.0).unwrap()).is_err());
    }
}
