//! Finite-difference gradient checks and equivalence checks between
//! alternative evaluation paths.
//!
//! Gradient checks run in `f64` so that central differences are limited by
//! the step size rather than by storage rounding.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{
    dw_backward, dw_forward, dw_forward_posembed, partial_forward, peripheral_backward, peripheral_forward,
    stripe_backward, stripe_forward, ConvForm, ConvSpec,
};
use crate::error::{Error, Result};
use crate::grid::build_grid;
use crate::kernel::{merge_reparam, CompactKernel, PositionalEmbedding};
use crate::tensor::{rel_error, Tensor};

/// Layer form under a gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradForm {
    Dense { k: usize },
    Stripe { long: usize, short: usize },
    Peripheral { k: usize, r_c: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub form: GradForm,
    pub channels: usize,
    pub size: usize,
    pub seed: u64,
    /// Coordinates sampled per input or parameter tensor.
    pub samples: usize,
    pub eps: f64,
}

impl GradCheckConfig {
    pub fn new(form: GradForm, size: usize, seed: u64) -> Self {
        GradCheckConfig {
            form,
            channels: 2,
            size,
            seed,
            samples: 50,
            eps: 1e-3,
        }
    }
}

/// One sampled coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub samples: Vec<GradSample>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.samples.iter().all(|s| s.rel_err <= tol)
    }
}

/// Relative error with an absolute floor so exact zeros compare cleanly.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

type Params = Vec<(&'static str, Tensor<f64>)>;

struct Problem {
    x: Tensor<f64>,
    dy: Tensor<f64>,
    params: Params,
    form: GradForm,
}

impl Problem {
    fn forward(&self, x: &Tensor<f64>, params: &Params) -> Result<Tensor<f64>> {
        let p = |i: usize| &params[i].1;
        match self.form {
            GradForm::Dense { .. } => dw_forward(x, p(0)),
            GradForm::Stripe { .. } => stripe_forward(x, p(0), p(1)),
            GradForm::Peripheral { k, r_c } => {
                let ck = CompactKernel::new(build_grid(k, r_c, 2)?, p(0).clone())?;
                let pe = PositionalEmbedding::new(p(1).clone())?;
                peripheral_forward(x, &ck, Some(&pe))
            }
        }
    }

    /// Analytic gradients: input first, then one per parameter.
    fn backward(&self) -> Result<Vec<Tensor<f64>>> {
        let p = |i: usize| &self.params[i].1;
        Ok(match self.form {
            GradForm::Dense { .. } => {
                let (dx, dw) = dw_backward(&self.x, p(0), &self.dy)?;
                vec![dx, dw]
            }
            GradForm::Stripe { .. } => {
                let (dx, dv, dh) = stripe_backward(&self.x, p(0), p(1), &self.dy)?;
                vec![dx, dv, dh]
            }
            GradForm::Peripheral { k, r_c } => {
                let ck = CompactKernel::new(build_grid(k, r_c, 2)?, p(0).clone())?;
                let pe = PositionalEmbedding::new(p(1).clone())?;
                let g = peripheral_backward(&self.x, &ck, Some(&pe), &self.dy)?;
                vec![g.dx, g.dw_compact, g.dh.expect("embedding was supplied")]
            }
        })
    }

    fn loss(&self, x: &Tensor<f64>, params: &Params) -> Result<f64> {
        self.dy.dot(&self.forward(x, params)?)
    }
}

fn build_problem(cfg: &GradCheckConfig) -> Result<Problem> {
    let (c, n) = (cfg.channels, cfg.size);
    if c == 0 || n == 0 {
        return Err(Error::invalid("gradient check needs positive channels and size"));
    }
    let seed = |i: u64| cfg.seed.wrapping_mul(1000).wrapping_add(i);
    let params: Params = match cfg.form {
        GradForm::Dense { k } => {
            if k % 2 == 0 {
                return Err(Error::invalid(format!("kernel size must be odd, got {k}")));
            }
            vec![("w", Tensor::random_normal(&[c, k, k], seed(2))?)]
        }
        GradForm::Stripe { long, short } => {
            if long % 2 == 0 || short % 2 == 0 {
                return Err(Error::invalid(format!("stripe sides must be odd, got {long}x{short}")));
            }
            vec![
                ("w_v", Tensor::random_normal(&[c, long, short], seed(2))?),
                ("w_h", Tensor::random_normal(&[c, short, long], seed(3))?),
            ]
        }
        GradForm::Peripheral { k, r_c } => {
            let kp = build_grid(k, r_c, 2)?.k_prime();
            vec![
                ("w_compact", Tensor::random_normal(&[c, kp, kp], seed(2))?),
                ("h", Tensor::random_normal(&[c, k, k], seed(3))?.scale(0.1)),
            ]
        }
    };
    Ok(Problem {
        x: Tensor::random_normal(&[c, n, n], seed(0))?,
        dy: Tensor::random_normal(&[c, n, n], seed(1))?,
        params,
        form: cfg.form,
    })
}

/// Compares analytic gradients with central differences on sampled
/// coordinates of the input and of every parameter tensor.
pub fn gradcheck(cfg: &GradCheckConfig) -> Result<GradReport> {
    if cfg.eps.is_nan() || cfg.eps <= 0.0 {
        return Err(Error::invalid(format!("step must be positive, got {}", cfg.eps)));
    }
    let prob = build_problem(cfg)?;
    let analytic = prob.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut samples = Vec::new();

    let names = std::iter::once("x").chain(prob.params.iter().map(|p| p.0));
    for (slot, (name, grad)) in names.zip(&analytic).enumerate() {
        for _ in 0..cfg.samples {
            let index = rng.random_range(0..grad.len());
            let numeric = {
                let eval = |delta: f64| -> Result<f64> {
                    let mut x = prob.x.clone();
                    let mut params = prob.params.clone();
                    let target = if slot == 0 { &mut x } else { &mut params[slot - 1].1 };
                    target.data_mut()[index] += delta;
                    prob.loss(&x, &params)
                };
                (eval(cfg.eps)? - eval(-cfg.eps)?) / (2.0 * cfg.eps)
            };
            let a = grad.data()[index];
            samples.push(GradSample {
                tensor: name,
                index,
                analytic: a,
                numeric,
                rel_err: grad_rel_err(a, numeric),
            });
        }
    }
    Ok(GradReport { samples })
}

/// Equivalence between two evaluation paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EquivCheck {
    /// Peripheral convolution against expand-then-dense.
    Sharing,
    /// Literal positional-embedding convolution against plain convolution
    /// plus the precomputed per-channel bias.
    Posembed,
    /// Merged kernel against the sum of the parallel branches.
    Reparam,
    /// Partial convolution against the peripheral oracle on the convolved
    /// channels and a bitwise copy on the rest.
    Partial,
}

impl EquivCheck {
    pub const ALL: [EquivCheck; 4] = [
        EquivCheck::Sharing,
        EquivCheck::Posembed,
        EquivCheck::Reparam,
        EquivCheck::Partial,
    ];

    pub fn tolerance(self) -> f64 {
        match self {
            EquivCheck::Sharing | EquivCheck::Partial => 1e-6,
            EquivCheck::Posembed | EquivCheck::Reparam => 1e-5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EquivCheck::Sharing => "sharing",
            EquivCheck::Posembed => "posembed",
            EquivCheck::Reparam => "reparam",
            EquivCheck::Partial => "partial",
        }
    }
}

impl fmt::Display for EquivCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EquivCheck {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EquivCheck::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown check '{s}' (expected sharing, posembed, reparam or partial)"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivReport {
    pub check: EquivCheck,
    pub seed: u64,
    pub rel_err: f64,
    pub tol: f64,
    /// Identity channels compared bitwise (partial check only).
    pub bit_exact: Option<bool>,
    pub detail: String,
}

impl EquivReport {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tol && self.bit_exact != Some(false)
    }
}

const SHARING_KERNELS: [usize; 4] = [5, 13, 33, 51];

/// Random sharing-equivalence instance: kernel from {5, 13, 33, 51}, central
/// radius up to 2, side up to 64.
pub fn sharing_instance(seed: u64) -> Result<(Tensor, CompactKernel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = SHARING_KERNELS[rng.random_range(0..SHARING_KERNELS.len())];
    let r_c = rng.random_range(0..=2usize);
    let c = rng.random_range(1..=3usize);
    let side = rng.random_range(8..=64usize);
    let grid = build_grid(k, r_c, 2)?;
    let kp = grid.k_prime();
    let ck = CompactKernel::new(grid, Tensor::random_normal(&[c, kp, kp], rng.random())?)?;
    Ok((Tensor::random_normal(&[c, side, side], rng.random())?, ck))
}

pub fn run_equiv(check: EquivCheck, seed: u64) -> Result<EquivReport> {
    let tol = check.tolerance();
    let report = |rel_err, bit_exact, detail: String| EquivReport {
        check,
        seed,
        rel_err,
        tol,
        bit_exact,
        detail,
    };
    let s = |i: u64| seed.wrapping_mul(7919).wrapping_add(i);
    Ok(match check {
        EquivCheck::Sharing => {
            let (x, ck) = sharing_instance(seed)?;
            let fused = peripheral_forward(&x, &ck, None)?;
            let oracle = dw_forward(&x, &ck.expand())?;
            let detail = format!(
                "k={} k'={} channels={} side={}",
                ck.grid().k(),
                ck.grid().k_prime(),
                ck.channels(),
                x.dims()[1]
            );
            report(rel_error(&fused, &oracle), None, detail)
        }
        EquivCheck::Posembed => {
            let (c, k, side) = (4, 13, 24);
            let x = Tensor::<f32>::random_normal(&[c, side, side], s(0))?;
            let grid = build_grid(k, 2, 2)?;
            let kp = grid.k_prime();
            let ck = CompactKernel::new(grid, Tensor::random_normal(&[c, kp, kp], s(1))?)?;
            let pe = PositionalEmbedding::new(Tensor::random_normal(&[c, k, k], s(2))?)?;
            let naive = dw_forward_posembed(&x, &ck.expand(), &pe)?;
            let fused = peripheral_forward(&x, &ck, Some(&pe))?;
            report(
                rel_error(&fused, &naive),
                None,
                format!("k={k} channels={c} side={side}"),
            )
        }
        EquivCheck::Reparam => {
            let (c, big, small, side) = (2, 13, 5, 20);
            let x = Tensor::<f32>::random_normal(&[c, side, side], s(0))?;
            let wl = Tensor::random_normal(&[c, big, big], s(1))?;
            let ws = Tensor::random_normal(&[c, small, small], s(2))?;
            let merged = dw_forward(&x, &merge_reparam(&wl, &ws)?)?;
            let branches = dw_forward(&x, &wl)?.add(&dw_forward(&x, &ws)?)?;
            report(
                rel_error(&merged, &branches),
                None,
                format!("large={big} small={small}"),
            )
        }
        EquivCheck::Partial => {
            let (c, k, side) = (8, 13, 20);
            let grid = build_grid(k, 2, 2)?;
            let spec = ConvSpec::partial(ConvForm::Peripheral(grid.clone()), c)?;
            let g = spec.conv_channels();
            let kp = grid.k_prime();
            let ck = CompactKernel::new(grid, Tensor::random_normal(&[g, kp, kp], s(1))?)?;
            let pe = PositionalEmbedding::new(Tensor::random_normal(&[g, k, k], s(2))?)?;
            let x = Tensor::<f32>::random_normal(&[c, side, side], s(0))?;
            let y = partial_forward(&x, &spec, &ck, Some(&pe))?;
            let oracle = dw_forward_posembed(&x.channel_range(0, g)?, &ck.expand(), &pe)?;
            let identical = y
                .channel_range(g, c)?
                .data()
                .iter()
                .zip(x.channel_range(g, c)?.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            report(
                rel_error(&y.channel_range(0, g)?, &oracle),
                Some(identical),
                format!("channels={c} g={g} identity_channels={}", c - g),
            )
        }
    })
}
