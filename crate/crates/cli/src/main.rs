mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Peripheral large-kernel convolution toolkit.
///
/// Output is CSV or key=value lines unless `--json` or `--pretty` is given.
#[derive(Parser, Debug)]
#[command(name = "pelk", version)]
struct Cli {
    /// Emit JSON instead of CSV / key=value text.
    #[arg(long, global = true, conflicts_with = "pretty")]
    json: bool,

    /// Emit aligned human-readable tables.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a sharing grid and report its ratios.
    Grid(GridArgs),
    /// Per-stage parameter (and optionally FLOPs) report of an architecture.
    Params(ParamsArgs),
    /// Parameter counts over a list of kernel sizes and forms.
    Curve(CurveArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Check that two evaluation paths agree.
    Equiv(EquivArgs),
    /// Time the forward pass of one layer.
    Bench(BenchArgs),
    /// Area ratios of a contribution map.
    Erf(ErfArgs),
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Full kernel size (odd).
    #[arg(long, default_value_t = 51)]
    pub k: usize,
    /// Side of the unshared central region (odd).
    #[arg(long, default_value_t = 5)]
    pub central: usize,
    /// Exponential base of the peripheral cells.
    #[arg(long, default_value_t = 2)]
    pub base: usize,
    /// Explicit half grid, outermost to center, e.g. "8,4,2,1,1,1".
    #[arg(long, conflicts_with_all = ["from", "k", "central", "base"])]
    pub custom: Option<String>,
    /// Load a grid JSON record instead of building one.
    #[arg(long, conflicts_with_all = ["k", "central", "base"])]
    pub from: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    /// Preset name (see `pelk params --list`).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Architecture config JSON file.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Override the large-kernel form: dense, stripe or peripheral.
    #[arg(long)]
    pub form: Option<String>,
    /// Input size HxW for FLOPs columns, e.g. 224x224.
    #[arg(long)]
    pub input: Option<String>,
    /// Print the preset names and exit.
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub list: bool,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    /// Base preset whose stage kernels are replaced.
    #[arg(long, default_value = "convnext-t")]
    pub arch: String,
    #[arg(long, default_value = "7,31,51,101,151")]
    pub kernels: String,
    #[arg(long, default_value = "dense,stripe,peripheral")]
    pub forms: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// dense, stripe or peripheral.
    #[arg(long, default_value = "peripheral")]
    pub form: String,
    #[arg(long, default_value_t = 13)]
    pub k: usize,
    /// Central region side (peripheral form).
    #[arg(long, default_value_t = 5)]
    pub central: usize,
    /// Short side of the stripe kernels.
    #[arg(long, default_value_t = 5)]
    pub short: usize,
    /// Spatial side of the random input.
    #[arg(long, default_value_t = 12)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Sampled coordinates per tensor.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
}

#[derive(Args, Debug)]
pub struct EquivArgs {
    /// sharing, posembed, reparam or partial.
    #[arg(long)]
    pub check: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value = "peripheral")]
    pub form: String,
    #[arg(long, default_value_t = 51)]
    pub k: usize,
    /// Channel count.
    #[arg(long, default_value_t = 16)]
    pub c: usize,
    /// Spatial size as N or HxW.
    #[arg(long, default_value = "56")]
    pub hw: String,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    /// Central region side (peripheral form).
    #[arg(long, default_value_t = 5)]
    pub central: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ErfArgs {
    /// Contribution map file (PTNS, or CSV by extension).
    #[arg(long, conflicts_with = "preset")]
    pub map: Option<std::path::PathBuf>,
    /// Build a randomly initialized network from this preset.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "0.2,0.3,0.5")]
    pub thresholds: String,
    /// Input side for preset networks (multiple of 32).
    #[arg(long, default_value_t = 128)]
    pub side: usize,
    /// Random input samples for preset networks.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    /// Channels of the preset network.
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Cap on blocks per stage for preset networks.
    #[arg(long)]
    pub max_blocks: Option<usize>,
    /// Replace every stage kernel of the preset.
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Also write the computed map to this file.
    #[arg(long)]
    pub save_map: Option<std::path::PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Plain,
    Json,
    Pretty,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = if cli.json {
        Format::Json
    } else if cli.pretty {
        Format::Pretty
    } else {
        Format::Plain
    };
    let result = commands::init_threads().and_then(|()| match cli.command {
        Command::Grid(a) => commands::grid(&a, format),
        Command::Params(a) => commands::params(&a, format),
        Command::Curve(a) => commands::curve(&a, format),
        Command::Gradcheck(a) => commands::gradcheck(&a, format),
        Command::Equiv(a) => commands::equiv(&a, format),
        Command::Bench(a) => commands::bench(&a, format),
        Command::Erf(a) => commands::erf(&a, format),
    });
    match result {
        Ok(out) => {
            print!("{}", out.stdout);
            if out.failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
