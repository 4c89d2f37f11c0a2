//! Four-stage architecture presets with parameter and FLOPs accounting.
//!
//! Counts beyond the large-kernel convolution follow a fixed ConvNeXt-style
//! block convention:
//!
//! * stem: 4×4 stride-4 convolution from 3 input channels, bias, LayerNorm
//! * block: depthwise conv (+bias) on the convolved channels, LayerNorm,
//!   pointwise `d→4d` and `4d→d` with biases, layer scale
//! * downsampler before stages 2–4: LayerNorm and a 2×2 stride-2 convolution
//! * head: LayerNorm and a linear classifier over 1000 classes
//!
//! FLOPs are multiply-accumulates of the backbone (head excluded). The
//! positional embedding costs one add per tap per layer through the bias
//! precompute path.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::conv::default_partial_fraction;
use crate::error::{Error, Result};
use crate::grid::build_grid;

const STEM_PATCH: usize = 4;
const IN_CHANNELS: usize = 3;
const NUM_CLASSES: usize = 1000;
const MLP_RATIO: usize = 4;
const GRID_BASE: usize = 2;

/// Large-kernel convolution form used by every stage of an architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchForm {
    Dense,
    /// `K×short + short×K` parallel kernels.
    Stripe {
        short: usize,
    },
    Peripheral,
}

impl ArchForm {
    /// Stripe forms use the short side fixed at 5.
    pub const STRIPE: ArchForm = ArchForm::Stripe { short: 5 };

    pub fn name(&self) -> &'static str {
        match self {
            ArchForm::Dense => "dense",
            ArchForm::Stripe { .. } => "stripe",
            ArchForm::Peripheral => "peripheral",
        }
    }
}

impl fmt::Display for ArchForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(ArchForm::Dense),
            "stripe" => Ok(ArchForm::STRIPE),
            "peripheral" => Ok(ArchForm::Peripheral),
            other => Err(Error::invalid(format!(
                "unknown form '{other}' (expected dense, stripe or peripheral)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub name: String,
    pub dims: [usize; 4],
    pub depths: [usize; 4],
    pub kernels: [usize; 4],
    /// Side of the unshared central region of peripheral kernels.
    pub central: usize,
    pub form: ArchForm,
    /// Fraction of channels routed through the large-kernel convolution.
    #[serde(with = "fraction_str")]
    pub partial_fraction: Ratio<usize>,
    #[serde(default = "default_true")]
    pub posembed_per_stage: bool,
    /// Label only; sparsity never enters the counts.
    #[serde(default)]
    pub dynamic_sparsity: bool,
}

fn default_true() -> bool {
    true
}

mod fraction_str {
    use num_rational::Ratio;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Ratio<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<usize>, D::Error> {
        let s = String::deserialize(d)?;
        s.trim()
            .parse()
            .map_err(|_| D::Error::custom(format!("invalid fraction '{s}'")))
    }
}

const TINY: ([usize; 4], [usize; 4]) = ([96, 192, 384, 768], [3, 3, 9, 3]);
const SMALL: ([usize; 4], [usize; 4]) = ([96, 192, 384, 768], [3, 3, 27, 3]);
const BASE: ([usize; 4], [usize; 4]) = ([128, 256, 512, 1024], [3, 3, 27, 3]);
const PELK_KERNELS: [usize; 4] = [51, 49, 47, 13];
const PELK_101_KERNELS: [usize; 4] = [101, 69, 67, 13];

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "pelk-t",
    "pelk-s",
    "pelk-b",
    "pelk-t-101",
    "pelk-b-101",
    "convnext-t",
    "convnext-s",
    "convnext-b",
    "slak-t",
    "slak-s",
    "slak-b",
];

pub fn preset(name: &str) -> Result<ArchConfig> {
    let pelk = |size: ([usize; 4], [usize; 4]), kernels, central| ArchConfig {
        name: name.to_string(),
        dims: size.0,
        depths: size.1,
        kernels,
        central,
        form: ArchForm::Peripheral,
        partial_fraction: default_partial_fraction(),
        posembed_per_stage: true,
        dynamic_sparsity: false,
    };
    let convnext = |size: ([usize; 4], [usize; 4])| ArchConfig {
        name: name.to_string(),
        dims: size.0,
        depths: size.1,
        kernels: [7; 4],
        central: 5,
        form: ArchForm::Dense,
        partial_fraction: Ratio::from_integer(1),
        posembed_per_stage: false,
        dynamic_sparsity: false,
    };
    let slak = |size: ([usize; 4], [usize; 4])| ArchConfig {
        name: name.to_string(),
        dims: size.0,
        depths: size.1,
        kernels: PELK_KERNELS,
        central: 5,
        form: ArchForm::STRIPE,
        partial_fraction: Ratio::from_integer(1),
        posembed_per_stage: false,
        dynamic_sparsity: true,
    };
    let cfg = match name {
        "pelk-t" => pelk(TINY, PELK_KERNELS, 5),
        "pelk-s" => pelk(SMALL, PELK_KERNELS, 5),
        "pelk-b" => pelk(BASE, PELK_KERNELS, 5),
        "pelk-t-101" => pelk(TINY, PELK_101_KERNELS, 7),
        "pelk-b-101" => pelk(BASE, PELK_101_KERNELS, 7),
        "convnext-t" => convnext(TINY),
        "convnext-s" => convnext(SMALL),
        "convnext-b" => convnext(BASE),
        "slak-t" => slak(TINY),
        "slak-s" => slak(SMALL),
        "slak-b" => slak(BASE),
        other => {
            return Err(Error::invalid(format!(
                "unknown preset '{other}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invalid(format!(
                "stage widths must be positive, got {:?}",
                self.dims
            )));
        }
        if let Some(k) = self.kernels.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::invalid(format!("stage kernel sizes must be odd, got {k}")));
        }
        if self.central.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "central size must be odd, got {}",
                self.central
            )));
        }
        if let ArchForm::Stripe { short } = self.form {
            if short == 0 || short % 2 == 0 {
                return Err(Error::invalid(format!("stripe short side must be odd, got {short}")));
            }
        }
        if self.form == ArchForm::Peripheral {
            if let Some(k) = self.kernels.iter().find(|&&k| k < self.central) {
                return Err(Error::invalid(format!(
                    "kernel size {k} is smaller than the central region {}",
                    self.central
                )));
            }
        }
        let f = self.partial_fraction;
        if *f.numer() == 0 || f > Ratio::from_integer(1) {
            return Err(Error::invalid(format!("partial fraction must be in (0, 1], got {f}")));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| self.conv_channels(d) == 0) {
            return Err(Error::invalid(format!(
                "partial fraction {f} of {d} channels leaves no convolved channel"
            )));
        }
        Ok(())
    }

    fn conv_channels(&self, dims: usize) -> usize {
        (self.partial_fraction * dims).to_integer()
    }

    /// Same configuration with every stage kernel replaced by `k`.
    pub fn with_uniform_kernel(&self, k: usize) -> ArchConfig {
        ArchConfig {
            kernels: [k; 4],
            ..self.clone()
        }
    }

    /// Per-channel learnable weights of one large-kernel layer in stage `s`,
    /// and the compact side (`k'`, `K` or the stripe short side).
    fn kernel_weights(&self, s: usize) -> Result<(usize, usize)> {
        let k = self.kernels[s];
        Ok(match self.form {
            ArchForm::Dense => (k * k, k),
            ArchForm::Stripe { short } => (2 * k * short, short),
            ArchForm::Peripheral => {
                let grid = build_grid(k, (self.central - 1) / 2, GRID_BASE)?;
                (grid.params_per_channel(), grid.k_prime())
            }
        })
    }
}

/// Parameter and FLOPs breakdown of one row of a report.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ReportRow {
    /// `stem`, `1`..`4`, `head` or `total`.
    pub label: String,
    pub kernel: usize,
    pub compact: usize,
    pub conv_params: u64,
    pub posembed_params: u64,
    pub other_params: u64,
    pub flops: Option<Flops>,
}

impl ReportRow {
    pub fn total_params(&self) -> u64 {
        self.conv_params + self.posembed_params + self.other_params
    }
}

/// Multiply-accumulate counts per backbone component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Flops {
    pub stem: u64,
    pub conv: u64,
    pub posembed: u64,
    pub ffn: u64,
    pub downsample: u64,
}

impl Flops {
    pub fn total(&self) -> u64 {
        self.stem + self.conv + self.posembed + self.ffn + self.downsample
    }

    fn add(&mut self, o: &Flops) {
        self.stem += o.stem;
        self.conv += o.conv;
        self.posembed += o.posembed;
        self.ffn += o.ffn;
        self.downsample += o.downsample;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub name: String,
    pub form: ArchForm,
    pub input_hw: Option<(usize, usize)>,
    /// `stem`, four stage rows and `head`; totals live in [`ParamReport::total`].
    pub rows: Vec<ReportRow>,
}

impl ParamReport {
    pub fn stages(&self) -> &[ReportRow] {
        &self.rows[1..5]
    }

    pub fn total(&self) -> ReportRow {
        let mut t = ReportRow {
            label: "total".into(),
            flops: self.input_hw.map(|_| Flops::default()),
            ..Default::default()
        };
        for r in &self.rows {
            t.conv_params += r.conv_params;
            t.posembed_params += r.posembed_params;
            t.other_params += r.other_params;
            if let (Some(acc), Some(f)) = (t.flops.as_mut(), r.flops.as_ref()) {
                acc.add(f);
            }
        }
        t
    }

    pub fn conv_params(&self) -> u64 {
        self.total().conv_params
    }

    pub fn posembed_params(&self) -> u64 {
        self.total().posembed_params
    }

    pub fn total_params(&self) -> u64 {
        self.total().total_params()
    }

    /// Share of backbone FLOPs spent in the large-kernel convolutions.
    pub fn conv_flops_share(&self) -> Option<f64> {
        let f = self.total().flops?;
        Some(f.conv as f64 / f.total() as f64)
    }

    pub fn posembed_flops_share(&self) -> Option<f64> {
        let f = self.total().flops?;
        Some(f.posembed as f64 / f.total() as f64)
    }

    /// CSV with one row per stem/stage/head plus a total row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,form,K,k_prime,conv_params,posembed_params,other_params,total_params");
        if self.input_hw.is_some() {
            out.push_str(",flops_stem,flops_conv,flops_posembed,flops_ffn,flops_downsample,flops_total");
        }
        out.push('\n');
        for r in self.rows.iter().cloned().chain(std::iter::once(self.total())) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}",
                r.label,
                self.form,
                r.kernel,
                r.compact,
                r.conv_params,
                r.posembed_params,
                r.other_params,
                r.total_params()
            ));
            if let Some(f) = r.flops {
                out.push_str(&format!(
                    ",{},{},{},{},{},{}",
                    f.stem,
                    f.conv,
                    f.posembed,
                    f.ffn,
                    f.downsample,
                    f.total()
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// Exact parameter counts of `cfg`.
pub fn conv_param_count(cfg: &ArchConfig) -> Result<ParamReport> {
    build_report(cfg, None)
}

/// Parameter counts plus the FLOPs model at input size `(h, w)`.
pub fn flops_report(cfg: &ArchConfig, input_hw: (usize, usize)) -> Result<ParamReport> {
    let (h, w) = input_hw;
    if h == 0 || w == 0 || h % STEM_PATCH != 0 || w % STEM_PATCH != 0 {
        return Err(Error::invalid(format!(
            "input size {h}x{w} must be positive and divisible by {STEM_PATCH}"
        )));
    }
    build_report(cfg, Some(input_hw))
}

fn build_report(cfg: &ArchConfig, input_hw: Option<(usize, usize)>) -> Result<ParamReport> {
    cfg.validate()?;
    let u = |v: usize| v as u64;
    let d0 = cfg.dims[0];
    let mut pixels = input_hw.map(|(h, w)| (h / STEM_PATCH, w / STEM_PATCH));

    let mut rows = Vec::with_capacity(6);
    rows.push(ReportRow {
        label: "stem".into(),
        other_params: u(STEM_PATCH * STEM_PATCH * IN_CHANNELS * d0 + d0 + 2 * d0),
        flops: pixels.map(|(ph, pw)| Flops {
            stem: u(STEM_PATCH * STEM_PATCH * IN_CHANNELS * d0 * ph * pw),
            ..Default::default()
        }),
        ..Default::default()
    });

    for s in 0..4 {
        let (d, n, k) = (cfg.dims[s], cfg.depths[s], cfg.kernels[s]);
        let g = cfg.conv_channels(d);
        let (per_channel, compact) = cfg.kernel_weights(s)?;

        let mut other = 0;
        let mut downsample_flops = 0;
        if s > 0 {
            let dp = cfg.dims[s - 1];
            other += 2 * dp + 4 * dp * d + d;
            if let Some((ph, pw)) = pixels {
                pixels = Some((ph / 2, pw / 2));
                downsample_flops = u(4 * dp * d * (ph / 2) * (pw / 2));
            }
        }
        // dw bias, LayerNorm, two pointwise layers, layer scale
        let hidden = MLP_RATIO * d;
        other += n * (g + 2 * d + (d * hidden + hidden) + (hidden * d + d) + d);

        let posembed = if cfg.form == ArchForm::Peripheral && cfg.posembed_per_stage && n > 0 {
            g * k * k
        } else {
            0
        };
        let flops = pixels.map(|(ph, pw)| {
            let hw = u(ph * pw);
            let taps = match cfg.form {
                ArchForm::Stripe { short } => 2 * k * short,
                _ => k * k,
            };
            Flops {
                stem: 0,
                conv: u(n * g * taps) * hw,
                posembed: if posembed > 0 { u(n * g * k * k) } else { 0 },
                ffn: u(n * 2 * d * hidden) * hw,
                downsample: downsample_flops,
            }
        });
        rows.push(ReportRow {
            label: (s + 1).to_string(),
            kernel: k,
            compact,
            conv_params: u(n * g * per_channel),
            posembed_params: u(posembed),
            other_params: u(other),
            flops,
        });
    }

    let d3 = cfg.dims[3];
    rows.push(ReportRow {
        label: "head".into(),
        other_params: u(2 * d3 + d3 * NUM_CLASSES + NUM_CLASSES),
        flops: pixels.map(|_| Flops::default()),
        ..Default::default()
    });

    Ok(ParamReport {
        name: cfg.name.clone(),
        form: cfg.form,
        input_hw,
        rows,
    })
}

/// One point of a kernel-size scaling curve.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CurvePoint {
    pub form: ArchForm,
    pub kernel: usize,
    pub compact: usize,
    pub conv_params: u64,
    pub posembed_params: u64,
    pub total_params: u64,
}

/// Replaces every stage kernel of `base` with each size in `kernels` and
/// reports the parameter count for each form. Points are ordered by form,
/// then by kernel size as given.
pub fn scaling_curve(base: &ArchConfig, kernels: &[usize], forms: &[ArchForm]) -> Result<Vec<CurvePoint>> {
    if kernels.is_empty() {
        return Err(Error::invalid("kernel list is empty"));
    }
    if forms.is_empty() {
        return Err(Error::invalid("form list is empty"));
    }
    let mut points = Vec::with_capacity(kernels.len() * forms.len());
    for &form in forms {
        for &k in kernels {
            let cfg = ArchConfig {
                form,
                ..base.with_uniform_kernel(k)
            };
            let report = conv_param_count(&cfg)?;
            let total = report.total();
            points.push(CurvePoint {
                form,
                kernel: k,
                compact: report.stages()[0].compact,
                conv_params: total.conv_params,
                posembed_params: total.posembed_params,
                total_params: total.total_params(),
            });
        }
    }
    Ok(points)
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("form,K,conv_params,posembed_params,total_params\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.form, p.kernel, p.conv_params, p.posembed_params, p.total_params
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_schedules() {
        let t = preset("pelk-t").unwrap();
        assert_eq!(t.kernels, [51, 49, 47, 13]);
        assert_eq!(t.depths, [3, 3, 9, 3]);
        assert_eq!(t.central, 5);
        let b = preset("pelk-b-101").unwrap();
        assert_eq!(b.kernels, [101, 69, 67, 13]);
        assert_eq!(b.dims, [128, 256, 512, 1024]);
        assert_eq!(b.depths, [3, 3, 27, 3]);
        assert_eq!(b.central, 7);
        assert_eq!(preset("pelk-s").unwrap().depths, [3, 3, 27, 3]);
        assert!(matches!(preset("pelk-xl"), Err(Error::InvalidArgument(_))));
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn convnext_t_dense_conv_params() {
        let r = conv_param_count(&preset("convnext-t").unwrap()).unwrap();
        assert_eq!(r.conv_params(), (3 * 96 + 3 * 192 + 9 * 384 + 3 * 768) * 49);
        assert_eq!(r.conv_params(), 324_576);
    }

    #[test]
    fn convnext_t_total_matches_reference_model() {
        // torchvision / timm convnext_tiny has 28,589,128 parameters.
        let r = conv_param_count(&preset("convnext-t").unwrap()).unwrap();
        assert_eq!(r.total_params(), 28_589_128);
    }

    #[test]
    fn pelk_t_breakdown() {
        let r = conv_param_count(&preset("pelk-t").unwrap()).unwrap();
        let st = r.stages();
        // g = 36, 72, 144, 288; k' = 13, 13, 13, 9
        assert_eq!(st[0].compact, 13);
        assert_eq!(st[3].compact, 9);
        assert_eq!(st[0].conv_params, 3 * 36 * 169);
        assert_eq!(st[0].posembed_params, 36 * 51 * 51);
        assert_eq!(st[3].posembed_params, 288 * 13 * 13);
        let summed: u64 = r.rows.iter().map(|row| row.total_params()).sum();
        assert_eq!(summed, r.total_params());
    }

    #[test]
    fn stripe_counts_both_branches() {
        let r = conv_param_count(&preset("slak-t").unwrap()).unwrap();
        assert_eq!(r.stages()[0].conv_params, 3 * 96 * 2 * 51 * 5);
    }

    #[test]
    fn validation_errors() {
        let mut c = preset("pelk-t").unwrap();
        c.kernels[1] = 48;
        assert!(c.validate().is_err());
        let mut c = preset("pelk-t").unwrap();
        c.central = 15;
        assert!(c.validate().is_err());
        let mut c = preset("pelk-t").unwrap();
        c.partial_fraction = Ratio::new(1, 200);
        assert!(c.validate().is_err());
        assert!(flops_report(&preset("pelk-t").unwrap(), (226, 224)).is_err());
        assert!(flops_report(&preset("pelk-t").unwrap(), (0, 224)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = preset("slak-t").unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains(r#""form":{"stripe":{"short":5}}"#), "{text}");
        assert!(text.contains(r#""partial_fraction":"1""#), "{text}");
        let back: ArchConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);

        let p = preset("pelk-t").unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains(r#""partial_fraction":"3/8""#));
        assert_eq!(serde_json::from_str::<ArchConfig>(&text).unwrap(), p);
    }

    #[test]
    fn flops_share_bands() {
        let r = flops_report(&preset("pelk-t").unwrap(), (2048, 512)).unwrap();
        let conv = r.conv_flops_share().unwrap();
        assert!((0.10..=0.45).contains(&conv), "conv share {conv}");
        assert!(r.posembed_flops_share().unwrap() < 0.005);
    }

    #[test]
    fn doubling_height_doubles_spatial_flops() {
        let cfg = preset("pelk-t").unwrap();
        let a = flops_report(&cfg, (1024, 512)).unwrap().total().flops.unwrap();
        let b = flops_report(&cfg, (2048, 512)).unwrap().total().flops.unwrap();
        assert_eq!(b.stem, 2 * a.stem);
        assert_eq!(b.conv, 2 * a.conv);
        assert_eq!(b.ffn, 2 * a.ffn);
        assert_eq!(b.downsample, 2 * a.downsample);
        assert_eq!(b.posembed, a.posembed);
    }

    #[test]
    fn csv_rows_sum_to_total() {
        let r = flops_report(&preset("pelk-t").unwrap(), (224, 224)).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 6 + 1);
        assert!(lines[0].ends_with("flops_total"));
        let col = |line: &str, i: usize| line.split(',').nth(i).unwrap().parse::<u64>().unwrap();
        let sum: u64 = lines[1..7].iter().map(|l| col(l, 7)).sum();
        assert_eq!(sum, col(lines[7], 7));
        let fsum: u64 = lines[1..7].iter().map(|l| col(l, 13)).sum();
        assert_eq!(fsum, col(lines[7], 13));
    }

    #[test]
    fn curve_rejects_empty_lists() {
        let base = preset("convnext-t").unwrap();
        assert!(scaling_curve(&base, &[], &[ArchForm::Dense]).is_err());
        assert!(scaling_curve(&base, &[7], &[]).is_err());
        assert!(scaling_curve(&base, &[8], &[ArchForm::Dense]).is_err());
    }
}
