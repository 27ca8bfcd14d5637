//! Experiment configuration: JSON, schema-checked before anything runs.

use std::path::{Path, PathBuf};

use regulab_core::occupation::MIN_BINS;
use regulab_core::paths::TimeGrid;
use regulab_core::plaplace::{SolverConfig, SpaceGrid1D, DEFAULT_PICARD_TOL};
use regulab_core::potential::PotentialSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; created by `run`, never partially written on a
    /// schema error.
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub path: PathStage,
    #[serde(default)]
    pub local_time: Option<LocalTimeStage>,
    pub potential: PotentialSpec,
    pub solver: SolverStage,
    #[serde(default)]
    pub checks: Vec<Suite>,
    #[serde(default)]
    pub sweep: Option<SweepAxes>,
    #[serde(default)]
    pub contraction: Option<ContractionStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Fbm,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathStage {
    #[serde(default = "default_path_kind")]
    pub kind: PathKind,
    #[serde(default = "default_hurst")]
    pub hurst: f64,
    pub steps: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalTimeStage {
    pub bins: usize,
    /// Added on each side of the path range.
    #[serde(default = "default_padding")]
    pub padding: f64,
    /// Smoothing bandwidth in units of the bin width.
    #[serde(default)]
    pub sigma_bins: f64,
    /// Time steps per local-time node; also the macro step of the
    /// robustified drift.
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    Classical,
    Robustified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialField {
    Zero {},
    /// `amplitude * sin(mode pi x)` in every component.
    Sine { amplitude: f64, mode: u32 },
}

impl InitialField {
    pub fn sample(&self, space: &SpaceGrid1D, dim: usize) -> Vec<f64> {
        match *self {
            InitialField::Zero {} => vec![0.0; space.interior() * dim],
            InitialField::Sine { amplitude, mode } => space.sample(dim, |x| {
                vec![amplitude * (mode as f64 * std::f64::consts::PI * x).sin(); dim]
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverStage {
    pub p: f64,
    pub interior: usize,
    #[serde(default = "default_mode")]
    pub mode: DriftMode,
    #[serde(default = "default_delta")]
    pub delta_reg: f64,
    #[serde(default)]
    pub picard_max: Option<usize>,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default)]
    pub snapshot_stride: usize,
    /// Half-width of the potential table for potentials of unbounded support.
    #[serde(default)]
    pub table_radius: Option<f64>,
    pub initial: InitialField,
}

impl SolverStage {
    pub fn solver_config(&self) -> CliResult<SolverConfig> {
        let space = SpaceGrid1D::new(self.interior).map_err(schema)?;
        let mut cfg = SolverConfig::new(self.p, space);
        cfg.delta_reg = self.delta_reg;
        if let Some(m) = self.picard_max {
            cfg.picard_max = m;
        }
        cfg.picard_tol = self.picard_tol;
        cfg.snapshot_stride = self.snapshot_stride;
        cfg.validate().map_err(schema)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Energy,
    Sewing,
    Sweep,
    Contraction,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Energy => "energy",
            Suite::Sewing => "sewing",
            Suite::Sweep => "sweep",
            Suite::Contraction => "contraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub eps: Vec<f64>,
    /// Defaults to the path block's Hurst parameter.
    #[serde(default)]
    pub hurst: Vec<f64>,
    /// Defaults to the top-level seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Also run the ladder with `w = 0` and report the divergence signature.
    #[serde(default)]
    pub zero_path: bool,
    /// Integrability exponent of the potential norm `||b||_{L^{2q}}`.
    #[serde(default = "default_one")]
    pub q: f64,
    /// Sobolev exponent of the local-time norm.
    #[serde(default = "default_two")]
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionStage {
    /// The second initial field; the first is `solver.initial`.
    pub initial: InitialField,
}

fn default_path_kind() -> PathKind {
    PathKind::Fbm
}
fn default_hurst() -> f64 {
    0.5
}
fn default_horizon() -> f64 {
    1.0
}
fn default_dim() -> usize {
    1
}
fn default_padding() -> f64 {
    0.5
}
fn default_mode() -> DriftMode {
    DriftMode::Classical
}
fn default_delta() -> f64 {
    1e-6
}
fn default_picard_tol() -> f64 {
    DEFAULT_PICARD_TOL
}
fn default_one() -> f64 {
    1.0
}
fn default_two() -> f64 {
    2.0
}

fn schema(e: impl std::fmt::Display) -> CliError {
    CliError::Schema(e.to_string())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(schema)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn time_grid(&self) -> CliResult<TimeGrid> {
        TimeGrid::new(self.path.horizon, self.path.steps).map_err(schema)
    }

    /// Hurst parameters and seeds of the sweep, falling back to the path block.
    pub fn sweep_axes(&self) -> Option<(Vec<f64>, Vec<u64>)> {
        self.sweep.as_ref().map(|s| {
            let h = if s.hurst.is_empty() { vec![self.path.hurst] } else { s.hurst.clone() };
            let seeds = if s.seeds.is_empty() { vec![self.seed] } else { s.seeds.clone() };
            (h, seeds)
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.output.as_os_str().is_empty() {
            return Err(schema("output directory must be set"));
        }
        let grid = self.time_grid()?;
        let p = &self.path;
        if !(p.hurst > 0.0 && p.hurst < 1.0) {
            return Err(schema(format!("path.hurst must lie in (0, 1), got {}", p.hurst)));
        }
        if !(1..=3).contains(&p.dim) {
            return Err(schema(format!("path.dim must be 1, 2 or 3, got {}", p.dim)));
        }
        self.potential.validate().map_err(schema)?;
        if let regulab_core::potential::PotentialKind::CustomTable { origin, .. } = &self.potential.kind {
            if origin.len() != p.dim {
                return Err(schema("custom table dimension differs from path.dim"));
            }
        }
        let solver = self.solver.solver_config()?;
        if let Some(r) = self.solver.table_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(schema("solver.table_radius must be positive"));
            }
        }
        if let Some(lt) = &self.local_time {
            if lt.bins < MIN_BINS {
                return Err(schema(format!("local_time.bins must be at least {MIN_BINS}")));
            }
            if lt.bins.checked_pow(p.dim as u32).is_none_or(|b| b > regulab_core::occupation::MAX_TOTAL_BINS) {
                return Err(schema("local_time.bins^dim exceeds the bin budget"));
            }
            if !(lt.padding >= 0.0 && lt.padding.is_finite()) {
                return Err(schema("local_time.padding must be non-negative"));
            }
            if !(lt.sigma_bins >= 0.0 && lt.sigma_bins.is_finite()) {
                return Err(schema("local_time.sigma_bins must be non-negative"));
            }
            if lt.stride == 0 || grid.steps() % lt.stride != 0 || !(grid.steps() / lt.stride).is_power_of_two() {
                return Err(schema("local_time.stride must divide path.steps into 2^k intervals"));
            }
            if self.solver.snapshot_stride != 0 && lt.stride % self.solver.snapshot_stride != 0 {
                return Err(schema("solver.snapshot_stride must divide local_time.stride"));
            }
        }
        if self.solver.snapshot_stride != 0 && grid.steps() % self.solver.snapshot_stride != 0 {
            return Err(schema("solver.snapshot_stride must divide path.steps"));
        }
        let needs_lt = self.solver.mode == DriftMode::Robustified
            || self.checks.contains(&Suite::Sewing)
            || self.checks.contains(&Suite::Sweep);
        if needs_lt && self.local_time.is_none() {
            return Err(schema("robustified mode and the sewing/sweep checks need a local_time block"));
        }
        if let Some(lt) = &self.local_time {
            if self.checks.contains(&Suite::Sewing) || self.checks.contains(&Suite::Sweep) {
                if lt.stride % solver.stride_for(grid.steps()) != 0 {
                    return Err(schema("local-time nodes must be stored snapshots; lower solver.snapshot_stride"));
                }
            }
            if self.checks.contains(&Suite::Sweep) && grid.steps() / lt.stride < 32 {
                return Err(schema("the sweep check needs at least 32 local-time intervals"));
            }
        }
        if self.checks.contains(&Suite::Sweep) {
            let Some(s) = &self.sweep else {
                return Err(schema("the sweep check needs a sweep block"));
            };
            if s.eps.len() < 4 {
                return Err(schema("sweep.eps needs at least 4 levels"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.eps.is_empty() || s.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(schema("sweep.eps must be a non-empty list of positive widths"));
            }
            if s.hurst.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
                return Err(schema("sweep.hurst entries must lie in (0, 1)"));
            }
            if !(s.q >= 1.0 && s.rho >= 1.0) {
                return Err(schema("sweep.q and sweep.rho must be at least 1"));
            }
        }
        if self.checks.contains(&Suite::Contraction) && self.contraction.is_none() {
            return Err(schema("the contraction check needs a contraction block"));
        }
        let mut seen = self.checks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.checks.len() {
            return Err(schema("checks must not repeat"));
        }
        Ok(())
    }
}
