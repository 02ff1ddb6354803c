use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "stereofuse",
    version,
    about = "Stereo matching fused with monocular depth"
)]
pub struct Cli {
    /// Worker threads (defaults to the config file, then all cores).
    #[arg(long, global = true, env = "STEREOFUSE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Estimate disparity for a rectified pair.
    Match(Box<MatchArgs>),
    /// Score disparity maps against ground truth.
    Eval(EvalArgs),
    /// Render a field as a color image.
    Viz(VizArgs),
    /// Register monocular depth onto a disparity map.
    Register(RegisterArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec as JSON; omitted fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConfidenceArg {
    Hybrid,
    Cost,
    Mono,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    /// Monocular depth (PFM, PNG or PGM). Without it only matching runs.
    #[arg(long)]
    pub mono: Option<PathBuf>,
    /// Pipeline configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth disparity (PFM) for the report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Scene file whose region masks are added to the report.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub d_max: Option<usize>,
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Guidance amplitude r.
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Ordering windows, e.g. `5,3`.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    #[arg(long)]
    pub no_sigmoid: bool,
    #[arg(long, value_enum)]
    pub registration: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub confidence: Option<ConfidenceArg>,
    /// Draw guidance from its Beta distribution with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Treat the monocular input as depth (larger is farther).
    #[arg(long)]
    pub mono_is_depth: bool,
    /// Disable pipeline stages: `ilf=off`, `gf=off`.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    /// Override any config entry: `section.key=value`.
    #[arg(long = "set")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One or more predictions; several are summarized as mean and std.
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub gt: PathBuf,
    /// Scene file with region masks.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Right-view ground truth; adds `occ` and `nonocc` masks.
    #[arg(long)]
    pub gt_right: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub occ_tol: f64,
    /// Count bad pixels with `>` instead of `>=`.
    #[arg(long)]
    pub exceeds: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ColormapArg {
    Turbo,
    Gray,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, value_enum, default_value = "turbo")]
    pub colormap: ColormapArg,
    /// Fixed value range `lo,hi`; min-max of the field otherwise.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub range: Option<(f64, f64)>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub mono: PathBuf,
    #[arg(long)]
    pub disp: PathBuf,
    /// Configuration whose `[registration]` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mono_is_depth: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_range(text: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = text.split_once(',').ok_or("expected `lo,hi`")?;
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((parse(lo)?, parse(hi)?))
}
