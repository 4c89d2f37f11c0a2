//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string that
//! the page parses with `JSON.parse`. The `api` module holds the same
//! operations with Rust error types for native tests.

use wasm_bindgen::prelude::*;

pub mod api {
    use pelk::arch::{self, scaling_curve as curve, ArchForm};
    use pelk::erf::{area_ratios, ErfNetwork, ErfOptions};
    use pelk::grid::{build_grid, round_scaled};
    use pelk::{CompactKernel, Error, Result, Tensor};
    use serde::Serialize;

    #[derive(Serialize)]
    struct GridView {
        k: usize,
        k_prime: usize,
        half: Vec<usize>,
        full: Vec<usize>,
        /// `k'²/k²` rounded to two decimals, times 100.
        param_ratio_x100: u64,
        /// Central share in basis points, absent when the center is shared.
        central_ratio_bp: Option<u64>,
        /// Region index `a·k' + b` of every kernel position, row-major.
        regions: Vec<usize>,
        /// Expansion of a random compact kernel, row-major `k×k`.
        expanded: Vec<f32>,
    }

    /// Sharing grid of a `k×k` kernel with a `central×central` unshared
    /// region, plus one random expanded kernel for display.
    pub fn grid_layout(k: usize, central: usize, base: usize, seed: u64) -> Result<String> {
        if central.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "central size must be odd, got {central}"
            )));
        }
        let grid = build_grid(k, central / 2, base)?;
        let p = grid.partition();
        let kp = grid.k_prime();
        let regions = (0..k * k)
            .map(|i| {
                let (a, b) = p.region_of(i / k, i % k);
                a * kp + b
            })
            .collect();
        let ck = CompactKernel::new(grid.clone(), Tensor::random_normal(&[1, kp, kp], seed)?)?;
        let view = GridView {
            k,
            k_prime: kp,
            half: grid.half().to_vec(),
            full: grid.full().to_vec(),
            param_ratio_x100: round_scaled(grid.param_ratio(), 100),
            central_ratio_bp: grid.central_ratio().map(|r| round_scaled(r, 10_000)),
            regions,
            expanded: ck.expand().into_data(),
        };
        Ok(serde_json::to_string(&view)?)
    }

    /// Parameter counts of `arch` with every stage kernel replaced by each
    /// size in the comma-separated `kernels`, for dense, stripe and
    /// peripheral forms.
    pub fn scaling_curve(arch_name: &str, kernels: &str) -> Result<String> {
        let base = arch::preset(arch_name)?;
        let ks = kernels
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("invalid kernel size '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let points = curve(&base, &ks, &[ArchForm::Dense, ArchForm::STRIPE, ArchForm::Peripheral])?;
        Ok(serde_json::to_string(&points)?)
    }

    #[derive(Serialize)]
    struct RatioView {
        t: f64,
        side: usize,
        r: f64,
    }

    #[derive(Serialize)]
    struct ErfView {
        side: usize,
        scores: Vec<f32>,
        ratios: Vec<RatioView>,
    }

    /// Contribution map of a randomly initialized network built from a
    /// preset, with one block per stage. `kernel == 0` keeps the preset's
    /// kernel schedule.
    pub fn erf_map(
        preset: &str,
        kernel: usize,
        side: usize,
        samples: usize,
        seed: u64,
        thresholds: &str,
    ) -> Result<String> {
        let mut cfg = arch::preset(preset)?;
        if kernel > 0 {
            cfg = cfg.with_uniform_kernel(kernel);
        }
        let ts = thresholds
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("invalid threshold '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let opts = ErfOptions {
            channels: 8,
            max_blocks_per_stage: Some(1),
        };
        let map = ErfNetwork::from_config(&cfg, &opts, seed)?.contribution_map(side, samples, seed)?;
        let ratios = area_ratios(&map, &ts)?
            .into_iter()
            .map(|a| RatioView {
                t: a.t,
                side: a.side,
                r: a.r,
            })
            .collect();
        Ok(serde_json::to_string(&ErfView {
            side,
            scores: map.scores().data().to_vec(),
            ratios,
        })?)
    }
}

fn js(r: pelk::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = gridLayout)]
pub fn grid_layout(k: usize, central: usize, base: usize, seed: u32) -> Result<String, JsError> {
    js(api::grid_layout(k, central, base, seed as u64))
}

#[wasm_bindgen(js_name = scalingCurve)]
pub fn scaling_curve(arch: &str, kernels: &str) -> Result<String, JsError> {
    js(api::scaling_curve(arch, kernels))
}

#[wasm_bindgen(js_name = erfMap)]
pub fn erf_map(
    preset: &str,
    kernel: usize,
    side: usize,
    samples: usize,
    seed: u32,
    thresholds: &str,
) -> Result<String, JsError> {
    js(api::erf_map(preset, kernel, side, samples, seed as u64, thresholds))
}
