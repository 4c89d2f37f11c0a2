//! Wall-clock timing of the forward pass for each convolution form.

use std::time::Instant;

use crate::arch::ArchForm;
use crate::conv::{dw_forward, peripheral_forward, stripe_forward};
use crate::error::{Error, Result};
use crate::grid::build_grid;
use crate::kernel::{CompactKernel, PositionalEmbedding};
use crate::tensor::Tensor;

pub const BENCH_CSV_HEADER: &str = "form,k,channels,H,W,iters,mean_ms,stddev_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub form: ArchForm,
    pub k: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub iters: usize,
    /// Central region side for the peripheral form.
    pub central: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

impl BenchResult {
    pub fn csv_row(&self) -> String {
        let c = &self.config;
        format!(
            "{},{},{},{},{},{},{:.6},{:.6}",
            c.form, c.k, c.channels, c.height, c.width, c.iters, self.mean_ms, self.stddev_ms
        )
    }
}

/// Runs the forward pass `iters` times and reports the sample mean and
/// standard deviation of the per-call wall time.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.iters == 0 {
        return Err(Error::invalid("iters must be at least 1"));
    }
    if cfg.channels == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::invalid(format!(
            "channels and spatial size must be positive, got c={} hw={}x{}",
            cfg.channels, cfg.height, cfg.width
        )));
    }
    if cfg.k.is_multiple_of(2) {
        return Err(Error::invalid(format!("kernel size must be odd, got {}", cfg.k)));
    }
    let (c, k) = (cfg.channels, cfg.k);
    let x = Tensor::<f32>::random_normal(&[c, cfg.height, cfg.width], cfg.seed)?;
    let op: Box<dyn Fn() -> Result<Tensor>> = match cfg.form {
        ArchForm::Dense => {
            let w = Tensor::random_normal(&[c, k, k], cfg.seed + 1)?;
            Box::new(move || dw_forward(&x, &w))
        }
        ArchForm::Stripe { short } => {
            if short % 2 == 0 || short > k {
                return Err(Error::invalid(format!(
                    "stripe short side must be odd and at most {k}, got {short}"
                )));
            }
            let wv = Tensor::random_normal(&[c, k, short], cfg.seed + 1)?;
            let wh = Tensor::random_normal(&[c, short, k], cfg.seed + 2)?;
            Box::new(move || stripe_forward(&x, &wv, &wh))
        }
        ArchForm::Peripheral => {
            if cfg.central.is_multiple_of(2) {
                return Err(Error::invalid(format!("central size must be odd, got {}", cfg.central)));
            }
            let grid = build_grid(k, cfg.central / 2, 2)?;
            let kp = grid.k_prime();
            let ck = CompactKernel::new(grid, Tensor::random_normal(&[c, kp, kp], cfg.seed + 1)?)?;
            let pe = PositionalEmbedding::init(c, k, cfg.seed + 2)?;
            Box::new(move || peripheral_forward(&x, &ck, Some(&pe)))
        }
    };

    let mut times = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let start = Instant::now();
        std::hint::black_box(op()?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = if times.len() > 1 {
        times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(BenchResult {
        config: cfg.clone(),
        mean_ms: mean,
        stddev_ms: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(form: ArchForm, k: usize) -> BenchConfig {
        BenchConfig {
            form,
            k,
            channels: 2,
            height: 16,
            width: 16,
            iters: 1,
            central: 5,
            seed: 0,
        }
    }

    #[test]
    fn single_iteration_runs_for_every_form() {
        for form in [ArchForm::Dense, ArchForm::STRIPE, ArchForm::Peripheral] {
            let r = run_bench(&cfg(form, 13)).unwrap();
            assert_eq!(r.stddev_ms, 0.0);
            assert_eq!(r.csv_row().split(',').count(), BENCH_CSV_HEADER.split(',').count());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = cfg(ArchForm::Dense, 7);
        c.iters = 0;
        assert!(run_bench(&c).is_err());
        assert!(run_bench(&cfg(ArchForm::Dense, 8)).is_err());
        let mut c = cfg(ArchForm::Dense, 7);
        c.height = 0;
        assert!(run_bench(&c).is_err());
    }
}
