use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Suite;

#[derive(Debug, Parser)]
#[command(name = "regulab", version, about = "Regularization-by-noise experiments for the p-Laplace system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a fractional Brownian path.
    Fbm(FbmArgs),
    /// Local times of a path on a uniform time subgrid.
    Localtime(LocalTimeArgs),
    /// Averaged drift table `b * (L_t - L_s)`.
    Average(AverageArgs),
    /// Solve one configured trajectory.
    Solve(SolveArgs),
    /// Run one check suite.
    Check(CheckArgs),
    /// Run the eps ladder of the sweep block.
    Sweep(ConfigArgs),
    /// Render a CSV as an SVG line or scatter plot.
    Plot(PlotArgs),
    /// Full pipeline: path, local times, solve, every configured check.
    Run(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct FbmArgs {
    #[arg(long = "H")]
    pub hurst: f64,
    #[arg(long = "N", default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LocalTimeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub bins: usize,
    /// Smoothing bandwidth in value units.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Number of time intervals (a power of two dividing the path steps).
    #[arg(long)]
    pub times: usize,
    #[arg(long, default_value_t = 0.5)]
    pub padding: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AverageArgs {
    /// Potential spec: inline JSON or a file holding it.
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub lt: PathBuf,
    /// `s,t` in time units; both must be local-time nodes.
    #[arg(long)]
    pub interval: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SuiteArg {
    Energy,
    Sewing,
    Sweep,
    Contraction,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Energy => Suite::Energy,
            SuiteArg::Sewing => Suite::Sewing,
            SuiteArg::Sweep => Suite::Sweep,
            SuiteArg::Contraction => Suite::Contraction,
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub x: String,
    /// Comma-separated column names.
    #[arg(long)]
    pub y: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log_x: bool,
    #[arg(long)]
    pub log_y: bool,
    #[arg(long)]
    pub scatter: bool,
    #[arg(long, default_value = "")]
    pub title: String,
}
