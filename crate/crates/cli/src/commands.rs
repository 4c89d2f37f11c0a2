use std::fs;
use std::path::Path;

use pelk::arch::{self, curve_to_csv, flops_report, scaling_curve, ArchConfig, ArchForm};
use pelk::bench::{run_bench, BenchConfig, BENCH_CSV_HEADER};
use pelk::check::{self, EquivCheck, GradCheckConfig, GradForm};
use pelk::erf::{area_ratios, area_ratios_to_csv, ContributionMap, ErfNetwork, ErfOptions};
use pelk::grid::{build_custom_grid, build_grid, round_scaled, GridJson, SharingGrid};
use pelk::io::{load_tensor, save_tensor};
use serde_json::json;

use crate::{BenchArgs, CurveArgs, EquivArgs, ErfArgs, Format, GradcheckArgs, GridArgs, ParamsArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] pelk::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_invalid_argument() => 2,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Text to print, and whether the command's check failed.
pub struct Output {
    pub stdout: String,
    pub failed: bool,
}

impl Output {
    fn ok(stdout: String) -> Self {
        Output { stdout, failed: false }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Applies `PELK_THREADS` to the global worker pool.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("PELK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("PELK_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("cannot configure {n} threads: {e}")))
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| usage(format!("invalid {what} '{s}'"))))
        .collect()
}

fn parse_hw(raw: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = raw.split(['x', 'X']).collect();
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("invalid size '{raw}' (expected N or HxW)")))
    };
    match parts[..] {
        [n] => Ok((num(n)?, num(n)?)),
        [h, w] => Ok((num(h)?, num(w)?)),
        _ => Err(usage(format!("invalid size '{raw}' (expected N or HxW)"))),
    }
}

fn parse_form(raw: &str) -> Result<ArchForm> {
    Ok(raw.parse::<ArchForm>()?)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Two-decimal rendering of a value already scaled by 100.
fn fixed2(scaled: u64) -> String {
    format!("{}.{:02}", scaled / 100, scaled % 100)
}

/// Aligns comma-separated rows into columns.
fn pretty_table(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn render_csv(csv: String, format: Format) -> String {
    match format {
        Format::Pretty => pretty_table(&csv),
        _ => csv,
    }
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn grid(a: &GridArgs, format: Format) -> Result<Output> {
    let grid = if let Some(custom) = &a.custom {
        build_custom_grid(&parse_list::<usize>(custom, "grid cell")?)?
    } else if let Some(path) = &a.from {
        let json: GridJson = serde_json::from_str(&read_file(path)?).map_err(pelk::Error::from)?;
        SharingGrid::from_json(&json)?
    } else {
        if a.central.is_multiple_of(2) {
            return Err(usage(format!("central size must be odd, got {}", a.central)));
        }
        build_grid(a.k, a.central / 2, a.base)?
    };
    if format == Format::Json {
        return Ok(Output::ok(to_json(&grid.to_json())));
    }
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let ratio = grid.param_ratio();
    let mut lines = vec![
        ("k", grid.k().to_string()),
        ("k_prime", grid.k_prime().to_string()),
        ("half", join(grid.half())),
        ("full", join(grid.full())),
        ("r_c", grid.central_radius().to_string()),
        ("m", grid.base().to_string()),
        ("param_ratio", ratio.to_string()),
        ("param_ratio_x", fixed2(round_scaled(ratio, 100))),
    ];
    if let Some(c) = grid.central_ratio() {
        lines.push(("central_ratio", c.to_string()));
        lines.push(("central_ratio_pct", fixed2(round_scaled(c, 10_000))));
    }
    let sep = if format == Format::Pretty { "  " } else { "=" };
    let width = if format == Format::Pretty { 17 } else { 0 };
    let text = lines.iter().map(|(k, v)| format!("{k:<width$}{sep}{v}\n")).collect();
    Ok(Output::ok(text))
}

fn load_arch(preset: Option<&str>, config: Option<&Path>) -> Result<ArchConfig> {
    let cfg = match (preset, config) {
        (Some(name), _) => arch::preset(name)?,
        (None, Some(path)) => serde_json::from_str(&read_file(path)?).map_err(pelk::Error::from)?,
        (None, None) => return Err(usage("one of --preset or --config is required")),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn params(a: &ParamsArgs, format: Format) -> Result<Output> {
    if a.list {
        return Ok(Output::ok(arch::PRESETS.iter().map(|p| format!("{p}\n")).collect()));
    }
    let mut cfg = load_arch(a.preset.as_deref(), a.config.as_deref())?;
    if let Some(form) = &a.form {
        cfg.form = parse_form(form)?;
    }
    let report = match &a.input {
        Some(hw) => flops_report(&cfg, parse_hw(hw)?)?,
        None => arch::conv_param_count(&cfg)?,
    };
    Ok(Output::ok(match format {
        Format::Json => to_json(&report),
        _ => render_csv(report.to_csv(), format),
    }))
}

pub fn curve(a: &CurveArgs, format: Format) -> Result<Output> {
    let base = arch::preset(&a.arch)?;
    let kernels: Vec<usize> = parse_list(&a.kernels, "kernel size")?;
    let forms = a
        .forms
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_form)
        .collect::<Result<Vec<_>>>()?;
    let points = scaling_curve(&base, &kernels, &forms)?;
    let text = match format {
        Format::Json => to_json(&points),
        _ => render_csv(curve_to_csv(&points), format),
    };
    match &a.out {
        Some(path) => {
            fs::write(path, &text).map_err(|source| CliError::File {
                path: path.display().to_string(),
                source,
            })?;
            Ok(Output::ok(String::new()))
        }
        None => Ok(Output::ok(text)),
    }
}

pub fn gradcheck(a: &GradcheckArgs, format: Format) -> Result<Output> {
    if a.tol.is_nan() || a.tol < 0.0 {
        return Err(usage(format!("tolerance must be non-negative, got {}", a.tol)));
    }
    let form = match parse_form(&a.form)? {
        ArchForm::Dense => GradForm::Dense { k: a.k },
        ArchForm::Stripe { .. } => GradForm::Stripe {
            long: a.k,
            short: a.short,
        },
        ArchForm::Peripheral => {
            if a.central.is_multiple_of(2) {
                return Err(usage(format!("central size must be odd, got {}", a.central)));
            }
            GradForm::Peripheral {
                k: a.k,
                r_c: a.central / 2,
            }
        }
    };
    let cfg = GradCheckConfig {
        channels: a.channels,
        samples: a.samples,
        eps: a.eps,
        ..GradCheckConfig::new(form, a.size, a.seed)
    };
    let report = check::gradcheck(&cfg)?;

    let mut tensors: Vec<&str> = Vec::new();
    for s in &report.samples {
        if !tensors.contains(&s.tensor) {
            tensors.push(s.tensor);
        }
    }
    let rows: Vec<(&str, usize, f64, bool)> = tensors
        .iter()
        .map(|&t| {
            let errs: Vec<f64> = report
                .samples
                .iter()
                .filter(|s| s.tensor == t)
                .map(|s| s.rel_err)
                .collect();
            let max = errs.iter().copied().fold(0.0, f64::max);
            (t, errs.len(), max, errs.iter().all(|&e| e <= a.tol))
        })
        .collect();
    let failed = rows.iter().any(|r| !r.3);
    let stdout = match format {
        Format::Json => to_json(&json!({
            "form": a.form,
            "k": a.k,
            "tol": a.tol,
            "passed": !failed,
            "tensors": rows.iter().map(|(t, n, max, ok)| json!({
                "tensor": t, "samples": n, "max_rel_err": max, "passed": ok,
            })).collect::<Vec<_>>(),
        })),
        _ => {
            let mut csv = String::from("form,k,tensor,samples,max_rel_err,tol,passed\n");
            for (t, n, max, ok) in &rows {
                csv.push_str(&format!("{},{},{t},{n},{max:e},{:e},{ok}\n", a.form, a.k, a.tol));
            }
            render_csv(csv, format)
        }
    };
    Ok(Output { stdout, failed })
}

pub fn equiv(a: &EquivArgs, format: Format) -> Result<Output> {
    let which: EquivCheck = a.check.parse()?;
    let r = check::run_equiv(which, a.seed)?;
    let bit_exact = r.bit_exact.map_or(String::new(), |b| b.to_string());
    let stdout = match format {
        Format::Json => to_json(&json!({
            "check": r.check.name(),
            "seed": r.seed,
            "rel_err": r.rel_err,
            "tol": r.tol,
            "bit_exact": r.bit_exact,
            "passed": r.passed(),
            "detail": r.detail,
        })),
        _ => render_csv(
            format!(
                "check,seed,rel_err,tol,bit_exact,passed,detail\n{},{},{:e},{:e},{bit_exact},{},{}\n",
                r.check,
                r.seed,
                r.rel_err,
                r.tol,
                r.passed(),
                r.detail
            ),
            format,
        ),
    };
    Ok(Output {
        stdout,
        failed: !r.passed(),
    })
}

pub fn bench(a: &BenchArgs, format: Format) -> Result<Output> {
    let (height, width) = parse_hw(&a.hw)?;
    let r = run_bench(&BenchConfig {
        form: parse_form(&a.form)?,
        k: a.k,
        channels: a.c,
        height,
        width,
        iters: a.iters,
        central: a.central,
        seed: a.seed,
    })?;
    Ok(Output::ok(match format {
        Format::Json => to_json(&json!({
            "form": r.config.form.name(),
            "k": a.k,
            "channels": a.c,
            "H": height,
            "W": width,
            "iters": a.iters,
            "mean_ms": r.mean_ms,
            "stddev_ms": r.stddev_ms,
        })),
        _ => render_csv(format!("{BENCH_CSV_HEADER}\n{}\n", r.csv_row()), format),
    }))
}

pub fn erf(a: &ErfArgs, format: Format) -> Result<Output> {
    let thresholds: Vec<f64> = parse_list(&a.thresholds, "threshold")?;
    if thresholds.is_empty() {
        return Err(usage("threshold list is empty"));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(usage(format!("threshold {t} outside (0, 1]")));
    }
    let map = match (&a.map, &a.preset) {
        (Some(path), _) => ContributionMap::new(load_tensor(path)?)?,
        (None, Some(name)) => {
            let mut cfg = arch::preset(name)?;
            if let Some(k) = a.kernel {
                cfg = cfg.with_uniform_kernel(k);
            }
            let opts = ErfOptions {
                channels: a.channels,
                max_blocks_per_stage: a.max_blocks,
            };
            ErfNetwork::from_config(&cfg, &opts, a.seed)?.contribution_map(a.side, a.samples, a.seed)?
        }
        (None, None) => return Err(usage("one of --map or --preset is required")),
    };
    if let Some(path) = &a.save_map {
        save_tensor(path, map.scores())?;
    }
    let rows = area_ratios(&map, &thresholds)?;
    Ok(Output::ok(match format {
        Format::Json => to_json(
            &rows
                .iter()
                .map(|r| json!({"t": r.t, "R": r.side, "r": r.r}))
                .collect::<Vec<_>>(),
        ),
        _ => render_csv(area_ratios_to_csv(&rows), format),
    }))
}
