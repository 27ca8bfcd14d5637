//! Pipeline stages: path, local time, potential table, solve, checks.

use rayon::prelude::*;
use regulab_core::diagnostics::{
    check_holder_bound, check_strong_estimate, check_weak_estimate, clamp_gamma, divergence_signature,
    local_time_holder_norm, sewing_identity_check, uniform_sweep_check, DivergenceVerdict, EnergyReport,
    EstimateCheck, SewingIdentity, SweepPoint, SweepVerdict, CONTRACTION_TOL, SEWING_IDENTITY_TOL,
};
use regulab_core::occupation::{estimate_time_regularity, local_time_family, strided_subgrid, LocalTimeDensity, ValueGrid};
use regulab_core::paths::generate_fbm;
use regulab_core::plaplace::{
    contraction_experiment, solve, ClassicalDrift, DriftEvaluator, RobustifiedDrift, StateTrajectory,
};
use regulab_core::potential::{
    l2q_norm, mollified_table, monotonicity_check, random_pairs, MonotonicityReport, PotentialSpec, PotentialTable,
};
use regulab_core::SamplePath;
use serde::{Deserialize, Serialize};

use crate::config::{DriftMode, ExperimentConfig, PathKind, Suite};
use crate::error::{CliError, CliResult, StageExt};

/// Pool for independent runs, capped by `REGULAB_THREADS` when set.
pub fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let threads = match std::env::var("REGULAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Schema(format!("REGULAB_THREADS must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Schema(format!("thread pool: {e}")))
}

pub fn build_path(cfg: &ExperimentConfig, kind: PathKind, hurst: f64, seed: u64) -> CliResult<SamplePath> {
    let grid = cfg.time_grid()?;
    match kind {
        PathKind::Zero => Ok(SamplePath::zero(grid, cfg.path.dim)),
        PathKind::Fbm => generate_fbm(grid, cfg.path.dim, hurst, seed).stage("path"),
    }
}

/// Cube of `bins^N` equal bins around the path range, widened by `padding`.
pub fn value_grid(path: &SamplePath, padding: f64, bins: usize) -> CliResult<ValueGrid> {
    let range = path.range();
    let half = range.iter().map(|(lo, hi)| 0.5 * (hi - lo)).fold(0.0, f64::max) + padding;
    let bounds = range.iter().map(|(lo, hi)| (0.5 * (lo + hi) - half, 0.5 * (lo + hi) + half)).collect();
    ValueGrid::new(bounds, bins).stage("local-time")
}

/// Local times on the configured subgrid, if the config has a local-time block.
pub fn local_time(cfg: &ExperimentConfig, path: &SamplePath) -> CliResult<Option<LocalTimeDensity>> {
    let Some(block) = &cfg.local_time else { return Ok(None) };
    let vg = value_grid(path, block.padding, block.bins)?;
    let idx = strided_subgrid(path.grid().steps(), block.stride).stage("local-time")?;
    let bandwidth = block.sigma_bins * vg.width(0);
    local_time_family(path, &idx, &vg, bandwidth).stage("local-time").map(Some)
}

fn path_reach(path: &SamplePath) -> f64 {
    path.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Mollified potential table of spacing `h` on a cube reaching past the
/// path (or the configured radius for potentials of unbounded support).
pub fn potential_table(cfg: &ExperimentConfig, spec: &PotentialSpec, path: &SamplePath, h: f64) -> CliResult<PotentialTable> {
    let fallback = cfg.solver.table_radius.unwrap_or(path_reach(path) + 4.0);
    mollified_table(spec, cfg.path.dim, h, fallback).stage("potential")
}

/// The drift table: bin width for the robustified drift (it is convolved
/// with local times), `eps / 4` for a classical mollified drift, none for a
/// classical raw potential (evaluated exactly).
pub fn drift_table(
    cfg: &ExperimentConfig,
    spec: &PotentialSpec,
    path: &SamplePath,
    lt: Option<&LocalTimeDensity>,
) -> CliResult<Option<PotentialTable>> {
    match (cfg.solver.mode, lt) {
        (DriftMode::Robustified, Some(lt)) => potential_table(cfg, spec, path, lt.grid().width(0)).map(Some),
        (DriftMode::Robustified, None) => Err(CliError::Schema("robustified mode needs local times".into())),
        (DriftMode::Classical, _) if spec.eps > 0.0 => potential_table(cfg, spec, path, spec.eps / 4.0).map(Some),
        (DriftMode::Classical, _) => Ok(None),
    }
}

/// Everything one solver run touched.
pub struct SingleRun {
    pub spec: PotentialSpec,
    pub path: SamplePath,
    pub local_time: Option<LocalTimeDensity>,
    pub table: Option<PotentialTable>,
    pub trajectory: StateTrajectory,
    pub report: EnergyReport,
}

fn make_drift<'a>(
    cfg: &ExperimentConfig,
    spec: &'a (PotentialSpec, usize),
    table: Option<&'a PotentialTable>,
    lt: Option<&'a LocalTimeDensity>,
    path: &'a SamplePath,
) -> CliResult<Box<dyn DriftEvaluator + 'a>> {
    match cfg.solver.mode {
        DriftMode::Classical => {
            let b: &dyn regulab_core::potential::VectorField = match table {
                Some(t) => t,
                None => spec,
            };
            Ok(Box::new(ClassicalDrift::new(b, path).stage("solve")?))
        }
        DriftMode::Robustified => {
            let (Some(t), Some(lt)) = (table, lt) else {
                return Err(CliError::Schema("robustified mode needs local times".into()));
            };
            Ok(Box::new(RobustifiedDrift::new(t, lt, path.grid()).stage("solve")?))
        }
    }
}

pub fn single_run(cfg: &ExperimentConfig, spec: &PotentialSpec, path: SamplePath) -> CliResult<SingleRun> {
    let scfg = cfg.solver.solver_config()?;
    let dim = cfg.path.dim;
    let local_time = local_time(cfg, &path)?;
    let table = drift_table(cfg, spec, &path, local_time.as_ref())?;
    let exact = (spec.clone(), dim);
    let u0 = cfg.solver.initial.sample(&scfg.space, dim);
    let trajectory = {
        let mut drift = make_drift(cfg, &exact, table.as_ref(), local_time.as_ref(), &path)?;
        solve(&scfg, path.grid(), &u0, dim, drift.as_mut()).stage("solve")?
    };
    let report = EnergyReport::from_trajectory(&trajectory).stage("energy")?;
    Ok(SingleRun { spec: spec.clone(), path, local_time, table, trajectory, report })
}

/// One line of the margins table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub suite: String,
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl Margin {
    fn from_estimate(suite: Suite, name: &str, c: &EstimateCheck) -> Self {
        Self { suite: suite.name().into(), name: name.into(), lhs: c.lhs, rhs: c.rhs, margin: c.margin, pass: c.pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyVerdict {
    pub strong: EstimateCheck,
    pub weak: EstimateCheck,
    pub holder: EstimateCheck,
    pub pass: bool,
}

pub fn energy_suite(run: &SingleRun) -> (EnergyVerdict, Vec<Margin>) {
    let r = &run.report;
    let (strong, weak, holder) = (check_strong_estimate(r), check_weak_estimate(r), check_holder_bound(r));
    let margins = vec![
        Margin::from_estimate(Suite::Energy, "strong", &strong),
        Margin::from_estimate(Suite::Energy, "weak", &weak),
        Margin::from_estimate(Suite::Energy, "holder", &holder),
    ];
    let pass = strong.pass && weak.pass && holder.pass;
    (EnergyVerdict { strong, weak, holder, pass }, margins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingVerdict {
    pub identity: SewingIdentity,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn sewing_suite(cfg: &ExperimentConfig, run: &SingleRun) -> CliResult<(SewingVerdict, Vec<Margin>)> {
    let Some(lt) = &run.local_time else {
        return Err(CliError::Schema("the sewing check needs local times".into()));
    };
    let table = potential_table(cfg, &run.spec, &run.path, lt.grid().width(0))?;
    let identity = sewing_identity_check(&run.trajectory, &table.squared_magnitude(), lt).stage("sewing")?;
    let pass = identity.residual <= SEWING_IDENTITY_TOL;
    let margin = Margin {
        suite: "sewing".into(),
        name: "control".into(),
        lhs: identity.sewn,
        rhs: identity.direct,
        margin: SEWING_IDENTITY_TOL * identity.direct.abs() - (identity.sewn - identity.direct).abs(),
        pass,
    };
    Ok((SewingVerdict { identity, tolerance: SEWING_IDENTITY_TOL, pass }, vec![margin]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionVerdict {
    pub initial: f64,
    pub max_distance: f64,
    pub max_ratio: f64,
    /// Monotonicity of the drift potential over the visited range.
    pub monotonicity: MonotonicityReport,
    pub pass: bool,
}

pub fn contraction_suite(cfg: &ExperimentConfig, run: &SingleRun) -> CliResult<(ContractionVerdict, Vec<Margin>)> {
    let Some(block) = &cfg.contraction else {
        return Err(CliError::Schema("the contraction check needs a contraction block".into()));
    };
    let scfg = cfg.solver.solver_config()?;
    let dim = cfg.path.dim;
    let exact = (cfg.potential.clone(), dim);
    let u0 = cfg.solver.initial.sample(&scfg.space, dim);
    let v0 = block.initial.sample(&scfg.space, dim);
    let (table, lt, path) = (run.table.as_ref(), run.local_time.as_ref(), &run.path);
    let mut du = make_drift(cfg, &exact, table, lt, path)?;
    let mut dv = make_drift(cfg, &exact, table, lt, path)?;
    let series =
        contraction_experiment(&scfg, path.grid(), &u0, &v0, dim, du.as_mut(), dv.as_mut()).stage("contraction")?;
    let state_reach = u0.iter().chain(&v0).fold(0.0f64, |m, v| m.max(v.abs()));
    let pairs = random_pairs(dim, path_reach(path) + state_reach + 1.0, 10_000, cfg.seed);
    let monotonicity = match table {
        Some(t) => monotonicity_check(t, &pairs),
        None => monotonicity_check(&exact, &pairs),
    }
    .stage("contraction")?;
    let max_distance = series.distances.iter().copied().fold(0.0, f64::max);
    let bound = series.initial * (1.0 + CONTRACTION_TOL);
    let pass = max_distance <= bound;
    let margin = Margin {
        suite: "contraction".into(),
        name: "distance".into(),
        lhs: max_distance,
        rhs: bound,
        margin: bound - max_distance,
        pass,
    };
    Ok((
        ContractionVerdict { initial: series.initial, max_distance, max_ratio: series.max_ratio, monotonicity, pass },
        vec![margin],
    ))
}

/// One `(path, eps)` run of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub zero_path: bool,
    pub hurst: f64,
    pub seed: u64,
    pub eps: f64,
    pub lhs: f64,
    pub control: f64,
    pub sup_grad_p: f64,
    pub holder_norm_sq: f64,
    pub b_l2q: f64,
}

/// Verdict for one fixed path across the eps ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGroup {
    pub zero_path: bool,
    pub hurst: f64,
    pub seed: u64,
    /// Fitted time-regularity exponent of the local times (fBm paths).
    pub gamma_hat: Option<f64>,
    pub local_time_norm: Option<f64>,
    pub uniform: Option<SweepVerdict>,
    pub divergence: Option<DivergenceVerdict>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub groups: Vec<SweepGroup>,
    pub pass: bool,
}

struct SweepTask {
    zero_path: bool,
    hurst: f64,
    seed: u64,
    eps: f64,
}

fn sweep_point(cfg: &ExperimentConfig, task: &SweepTask, q: f64) -> CliResult<SweepRow> {
    let kind = if task.zero_path { PathKind::Zero } else { PathKind::Fbm };
    let path = build_path(cfg, kind, task.hurst, task.seed)?;
    let mut spec = cfg.potential.clone();
    spec.eps = task.eps;
    let run = single_run(cfg, &spec, path)?;
    let b_l2q = match &run.table {
        Some(t) => l2q_norm(t.field(), q).stage("sweep")?,
        None => f64::NAN,
    };
    let r = &run.report;
    let p = SweepPoint::from_report(task.eps, r);
    Ok(SweepRow {
        zero_path: task.zero_path,
        hurst: task.hurst,
        seed: task.seed,
        eps: task.eps,
        lhs: p.lhs,
        control: p.control,
        sup_grad_p: r.sup_grad_p(),
        holder_norm_sq: r.holder_norm_sq(),
        b_l2q,
    })
}

pub fn sweep_suite(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> CliResult<(SweepOutcome, Vec<Margin>)> {
    let Some(axes) = &cfg.sweep else {
        return Err(CliError::Schema("the sweep check needs a sweep block".into()));
    };
    let (hursts, seeds) = cfg.sweep_axes().expect("sweep block present");
    let mut paths: Vec<(bool, f64, u64)> = Vec::new();
    if axes.zero_path {
        paths.push((true, 0.0, 0));
    }
    for &h in &hursts {
        for &s in &seeds {
            paths.push((false, h, s));
        }
    }
    let tasks: Vec<SweepTask> = paths
        .iter()
        .flat_map(|&(zero_path, hurst, seed)| axes.eps.iter().map(move |&eps| SweepTask { zero_path, hurst, seed, eps }))
        .collect();
    let rows = pool.install(|| tasks.par_iter().map(|t| sweep_point(cfg, t, axes.q)).collect::<CliResult<Vec<_>>>())?;

    let scfg = cfg.solver.solver_config()?;
    let u0 = cfg.solver.initial.sample(&scfg.space, cfg.path.dim);
    let u0_l2_sq = regulab_core::plaplace::l2_squared(&scfg.space, &u0);
    let u0_grad_p = regulab_core::plaplace::gradient_power(&scfg.space, &u0, cfg.path.dim, scfg.p);
    let levels = axes.eps.len();
    let groups = pool.install(|| {
        paths
            .par_iter()
            .enumerate()
            .map(|(g, &(zero_path, hurst, seed))| {
                let chunk = &rows[g * levels..(g + 1) * levels];
                if zero_path {
                    let controls: Vec<f64> = chunk.iter().map(|r| r.control).collect();
                    let d = divergence_signature(&controls);
                    let pass = d.pass;
                    return Ok(SweepGroup {
                        zero_path,
                        hurst,
                        seed,
                        gamma_hat: None,
                        local_time_norm: None,
                        uniform: None,
                        divergence: Some(d),
                        pass,
                    });
                }
                let path = build_path(cfg, PathKind::Fbm, hurst, seed)?;
                let lt = local_time(cfg, &path)?.expect("validated: sweep needs local times");
                let gamma = estimate_time_regularity(&lt, axes.rho).stage("sweep")?.exponent;
                let lt_norm = local_time_holder_norm(&lt, axes.rho, clamp_gamma(gamma)).stage("sweep")?;
                let b = chunk.iter().map(|r| r.b_l2q).fold(0.0, f64::max);
                let points: Vec<SweepPoint> =
                    chunk.iter().map(|r| SweepPoint { eps: r.eps, lhs: r.lhs, control: r.control }).collect();
                let v = uniform_sweep_check(&points, u0_l2_sq, u0_grad_p, Some(b), Some(lt_norm)).stage("sweep")?;
                let pass = v.pass;
                Ok(SweepGroup {
                    zero_path,
                    hurst,
                    seed,
                    gamma_hat: Some(gamma),
                    local_time_norm: Some(lt_norm),
                    uniform: Some(v),
                    divergence: None,
                    pass,
                })
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let margins = groups
        .iter()
        .map(|g| {
            let name = if g.zero_path { "zero-path".to_string() } else { format!("fbm-h{}-s{}", g.hurst, g.seed) };
            match (&g.uniform, &g.divergence) {
                (Some(v), _) => Margin {
                    suite: "sweep".into(),
                    name,
                    lhs: v.lhs_ratio,
                    rhs: regulab_core::diagnostics::SWEEP_RATIO,
                    margin: regulab_core::diagnostics::SWEEP_RATIO - v.lhs_ratio,
                    pass: g.pass,
                },
                (None, Some(d)) => {
                    let worst = d.growth.iter().copied().fold(f64::INFINITY, f64::min);
                    let floor = regulab_core::diagnostics::DIVERGENCE_GROWTH;
                    Margin { suite: "sweep".into(), name, lhs: worst, rhs: floor, margin: worst - floor, pass: g.pass }
                }
                (None, None) => unreachable!("every group carries a verdict"),
            }
        })
        .collect();
    let pass = groups.iter().all(|g| g.pass);
    Ok((SweepOutcome { rows, groups, pass }, margins))
}
