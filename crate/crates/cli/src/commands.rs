use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regulab_core::averaging::Averager;
use regulab_core::occupation::{local_time_family, ValueGrid};
use regulab_core::paths::generate_fbm;
use regulab_core::potential::{mollified_table, PotentialSpec};
use regulab_core::TimeGrid;
use serde::Serialize;

use crate::cli::{AverageArgs, CheckArgs, Command, ConfigArgs, FbmArgs, LocalTimeArgs, PlotArgs, SolveArgs};
use crate::config::{ExperimentConfig, Suite};
use crate::error::{CliError, CliResult, StageExt, EXIT_FAIL, EXIT_OK};
use crate::io::{self, fmt, write_csv, write_json, OutputSet, Table};
use crate::manifest::Manifest;
use crate::pipeline::{self, Margin, SingleRun, SweepOutcome};
use crate::plot::{render, PlotSpec, Series};

pub fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::Fbm(a) => fbm(&a),
        Command::Localtime(a) => localtime(&a),
        Command::Average(a) => average(&a),
        Command::Solve(a) => solve(&a),
        Command::Check(a) => check(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Plot(a) => plot(&a),
        Command::Run(a) => run(&a.config, a.output.as_deref()),
    }
}

fn exit_for(pass: bool) -> i32 {
    if pass {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

fn load(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn fbm(a: &FbmArgs) -> CliResult<i32> {
    let grid = TimeGrid::new(a.horizon, a.steps).map_err(|e| CliError::Schema(e.to_string()))?;
    if !(a.hurst > 0.0 && a.hurst < 1.0) || !(1..=3).contains(&a.dim) {
        return Err(CliError::Schema("need 0 < H < 1 and N in 1..=3".into()));
    }
    let path = generate_fbm(grid, a.dim, a.hurst, a.seed).stage("path")?;
    io::write_path(&a.out, &path)?;
    Ok(EXIT_OK)
}

fn localtime(a: &LocalTimeArgs) -> CliResult<i32> {
    let path = io::read_path(&a.input)?;
    let steps = path.grid().steps();
    if a.times == 0 || !a.times.is_power_of_two() || steps % a.times != 0 {
        return Err(CliError::Schema(format!("--times must be a power of two dividing {steps}")));
    }
    if !(a.sigma >= 0.0 && a.padding >= 0.0) {
        return Err(CliError::Schema("--sigma and --padding must be non-negative".into()));
    }
    let vg = pipeline::value_grid(&path, a.padding, a.bins)?;
    let idx: Vec<usize> = (0..=a.times).map(|i| i * (steps / a.times)).collect();
    let lt = local_time_family(&path, &idx, &vg, a.sigma).stage("local-time")?;
    let all: Vec<usize> = (0..lt.len()).collect();
    io::write_local_time(&a.out, &lt, &all, path.grid())?;
    Ok(EXIT_OK)
}

fn parse_spec(arg: &str) -> CliResult<PotentialSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| CliError::io(arg, e))?
    };
    let spec: PotentialSpec = serde_json::from_str(&text).map_err(|e| CliError::Schema(e.to_string()))?;
    spec.validate().map_err(|e| CliError::Schema(e.to_string()))?;
    Ok(spec)
}

#[derive(Serialize)]
struct DriftSidecar {
    interval: (f64, f64),
    bound: f64,
    origin: Vec<f64>,
    spacing: Vec<f64>,
    counts: Vec<usize>,
}

fn average(a: &AverageArgs) -> CliResult<i32> {
    let spec = parse_spec(&a.b)?;
    let (s, t) = a
        .interval
        .split_once(',')
        .and_then(|(s, t)| Some((s.trim().parse::<f64>().ok()?, t.trim().parse::<f64>().ok()?)))
        .ok_or_else(|| CliError::Schema(format!("--interval expects `s,t`, got `{}`", a.interval)))?;
    let table = io::read_local_time(&a.lt)?;
    let node = |time: f64| {
        let tol = 1e-12 * table.sidecar.horizon.max(1.0);
        table
            .sidecar
            .times
            .iter()
            .find(|(_, &v)| (v - time).abs() <= tol)
            .map(|(&k, _)| k)
            .ok_or_else(|| CliError::Schema(format!("time {time} is not a local-time node")))
    };
    let (ks, kt) = (node(s)?, node(t)?);
    if ks > kt {
        return Err(CliError::Schema("--interval needs s <= t".into()));
    }
    let vg: &ValueGrid = &table.grid;
    if !matches!(spec.kind, regulab_core::potential::PotentialKind::Zero {}) && vg.dim() != potential_dim(&spec, vg.dim()) {
        return Err(CliError::Schema("potential dimension differs from the local-time grid".into()));
    }
    let reach = vg.bounds().iter().map(|(lo, hi)| lo.abs().max(hi.abs())).fold(0.0, f64::max);
    let b = mollified_table(&spec, vg.dim(), vg.width(0), reach + 4.0).stage("potential")?;
    let diff: Vec<f64> = table.densities[&kt].iter().zip(&table.densities[&ks]).map(|(x, y)| x - y).collect();
    let drift = Averager::new(b.field(), vg.lattice()).stage("average")?.apply(&diff, (s, t));
    let field = drift.field();
    let lat = field.lattice();
    let dim = lat.dim();
    let mut header: Vec<String> = (1..=dim).map(|i| format!("z_{i}")).collect();
    header.extend((1..=field.components()).map(|i| format!("d_{i}")));
    let rows = (0..lat.len()).map(|k| {
        let mut row: Vec<String> = lat.node(k).iter().map(|&z| fmt(z)).collect();
        row.extend(field.value(k).iter().map(|&v| fmt(v)));
        row
    });
    write_csv(&a.out, &header, rows)?;
    write_json(
        &io::sidecar_path(&a.out),
        &DriftSidecar {
            interval: (s, t),
            bound: drift.bound(),
            origin: lat.origin().to_vec(),
            spacing: lat.spacing().to_vec(),
            counts: lat.counts().to_vec(),
        },
    )?;
    Ok(EXIT_OK)
}

fn potential_dim(spec: &PotentialSpec, default: usize) -> usize {
    match &spec.kind {
        regulab_core::potential::PotentialKind::CustomTable { origin, .. } => origin.len(),
        _ => default,
    }
}

fn base_run(cfg: &ExperimentConfig) -> CliResult<SingleRun> {
    let path = pipeline::build_path(cfg, cfg.path.kind, cfg.path.hurst, cfg.seed)?;
    pipeline::single_run(cfg, &cfg.potential, path)
}

fn solve(a: &SolveArgs) -> CliResult<i32> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let run = base_run(&cfg)?;
    io::write_trajectory(&a.out, &run.trajectory)?;
    io::write_energy(&a.report, &run.report, &run.trajectory)?;
    Ok(EXIT_OK)
}

/// Verdict of one suite, ready for JSON.
#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub pass: bool,
    pub verdict: serde_json::Value,
    #[serde(skip)]
    pub margins: Vec<Margin>,
    #[serde(skip)]
    pub sweep: Option<SweepOutcome>,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("verdicts serialize")
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    suite: Suite,
    run: &SingleRun,
    pool: &rayon::ThreadPool,
) -> CliResult<SuiteReport> {
    let (pass, verdict, margins, sweep) = match suite {
        Suite::Energy => {
            let (v, m) = pipeline::energy_suite(run);
            (v.pass, to_value(&v), m, None)
        }
        Suite::Sewing => {
            let (v, m) = pipeline::sewing_suite(cfg, run)?;
            (v.pass, to_value(&v), m, None)
        }
        Suite::Contraction => {
            let (v, m) = pipeline::contraction_suite(cfg, run)?;
            (v.pass, to_value(&v), m, None)
        }
        Suite::Sweep => {
            let (v, m) = pipeline::sweep_suite(cfg, pool)?;
            (v.pass, to_value(&v.groups), m, Some(v))
        }
    };
    Ok(SuiteReport { suite, pass, verdict, margins, sweep })
}

fn margins_header() -> Vec<String> {
    ["suite", "name", "lhs", "rhs", "margin", "pass"].iter().map(|s| s.to_string()).collect()
}

fn margin_rows(margins: &[Margin]) -> Vec<Vec<String>> {
    margins
        .iter()
        .map(|m| vec![m.suite.clone(), m.name.clone(), fmt(m.lhs), fmt(m.rhs), fmt(m.margin), m.pass.to_string()])
        .collect()
}

fn check(a: &CheckArgs) -> CliResult<i32> {
    let cfg = load(&a.config)?;
    let suite: Suite = a.suite.into();
    let pool = pipeline::thread_pool()?;
    let run = base_run(&cfg)?;
    let report = evaluate(&cfg, suite, &run, &pool)?;
    create_dir(&cfg.output)?;
    let stem = format!("check_{}", suite.name());
    write_json(&cfg.output.join(format!("{stem}.json")), &report)?;
    write_csv(&cfg.output.join(format!("{stem}.csv")), &margins_header(), margin_rows(&report.margins))?;
    if let Some(s) = &report.sweep {
        write_sweep(&cfg.output, s, &mut OutputSet::default())?;
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("verdicts serialize"));
    Ok(exit_for(report.pass))
}

fn sweep_header() -> Vec<String> {
    ["zero_path", "hurst", "seed", "eps", "lhs", "control", "sup_grad_p", "holder_norm_sq", "b_l2q"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn write_sweep(dir: &Path, s: &SweepOutcome, out: &mut OutputSet) -> CliResult<()> {
    let csv = dir.join("sweep.csv");
    write_csv(
        &csv,
        &sweep_header(),
        s.rows.iter().map(|r| {
            vec![
                u8::from(r.zero_path).to_string(),
                fmt(r.hurst),
                r.seed.to_string(),
                fmt(r.eps),
                fmt(r.lhs),
                fmt(r.control),
                fmt(r.sup_grad_p),
                fmt(r.holder_norm_sq),
                fmt(r.b_l2q),
            ]
        }),
    )?;
    out.record(&csv);
    let json = dir.join("sweep.json");
    write_json(&json, s)?;
    out.record(&json);
    let mut series = Vec::new();
    for g in &s.groups {
        let label = if g.zero_path { "w=0".to_string() } else { format!("H={} seed={}", g.hurst, g.seed) };
        let rows = s.rows.iter().filter(|r| r.zero_path == g.zero_path && r.hurst == g.hurst && r.seed == g.seed);
        let rows: Vec<_> = rows.collect();
        series.push(Series { name: format!("LHS {label}"), points: rows.iter().map(|r| (r.eps, r.lhs)).collect() });
        series.push(Series { name: format!("control {label}"), points: rows.iter().map(|r| (r.eps, r.control)).collect() });
    }
    let spec = PlotSpec {
        title: "eps sweep".into(),
        x_label: "eps".into(),
        y_label: "value".into(),
        log_x: true,
        log_y: true,
        scatter: false,
    };
    let svg = dir.join("sweep.svg");
    std::fs::write(&svg, render(&spec, &series)).map_err(|e| CliError::io(&svg, e))?;
    out.record(&svg);
    Ok(())
}

fn sweep(a: &ConfigArgs) -> CliResult<i32> {
    let cfg = load(a)?;
    if cfg.sweep.is_none() {
        return Err(CliError::Schema("the configuration has no sweep block".into()));
    }
    let pool = pipeline::thread_pool()?;
    let (outcome, _) = pipeline::sweep_suite(&cfg, &pool)?;
    create_dir(&cfg.output)?;
    write_sweep(&cfg.output, &outcome, &mut OutputSet::default())?;
    Ok(exit_for(outcome.pass))
}

fn plot(a: &PlotArgs) -> CliResult<i32> {
    let table = Table::read(&a.csv)?;
    let x = table.column(&a.x)?;
    let mut series = Vec::new();
    for name in a.y.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let y = table.column(name)?;
        series.push(Series { name: name.to_string(), points: x.iter().copied().zip(y).collect() });
    }
    let spec = PlotSpec {
        title: a.title.clone(),
        x_label: a.x.clone(),
        y_label: a.y.clone(),
        log_x: a.log_x,
        log_y: a.log_y,
        scatter: a.scatter,
    };
    std::fs::write(&a.out, render(&spec, &series)).map_err(|e| CliError::io(&a.out, e))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct RunReport<'a> {
    pass: bool,
    checks: BTreeMap<&'static str, &'a SuiteReport>,
}

/// Local-time nodes written by `run`: at most 17, evenly spaced.
fn written_nodes(len: usize) -> Vec<usize> {
    let n = len - 1;
    let step = (n / 16).max(1);
    (0..=n).step_by(step).collect()
}

/// The manifest records the configuration as written, so an `--output`
/// override does not change it.
pub fn run(config: &Path, output: Option<&Path>) -> CliResult<i32> {
    let mut cfg = ExperimentConfig::load(config)?;
    let as_configured = cfg.clone();
    if let Some(o) = output {
        cfg.output = o.to_path_buf();
    }
    let pool = pipeline::thread_pool()?;
    let dir: PathBuf = cfg.output.clone();
    create_dir(&dir)?;
    let mut out = OutputSet::default();
    let file = |name: &str| dir.join(name);

    let path = pipeline::build_path(&cfg, cfg.path.kind, cfg.path.hurst, cfg.seed)?;
    io::write_path(&file("path.csv"), &path)?;
    out.record(&file("path.csv"));
    let run = pipeline::single_run(&cfg, &cfg.potential, path)?;
    if let Some(lt) = &run.local_time {
        let side = io::write_local_time(&file("localtime.csv"), lt, &written_nodes(lt.len()), run.path.grid())?;
        out.record(&file("localtime.csv"));
        out.record(&side);
    }
    io::write_trajectory(&file("trajectory.csv"), &run.trajectory)?;
    out.record(&file("trajectory.csv"));
    io::write_energy(&file("energy.csv"), &run.report, &run.trajectory)?;
    out.record(&file("energy.csv"));
    let energy_plot = Table::read(&file("energy.csv"))?;
    let t = energy_plot.column("t")?;
    let series = ["l2", "grad_lp", "cum_drift_sq"]
        .iter()
        .map(|c| Ok(Series { name: c.to_string(), points: t.iter().copied().zip(energy_plot.column(c)?).collect() }))
        .collect::<CliResult<Vec<_>>>()?;
    let spec = PlotSpec { title: "energy".into(), x_label: "t".into(), y_label: "value".into(), ..Default::default() };
    std::fs::write(file("energy.svg"), render(&spec, &series)).map_err(|e| CliError::io(file("energy.svg"), e))?;
    out.record(&file("energy.svg"));

    let mut reports = Vec::new();
    for &suite in &cfg.checks {
        let r = evaluate(&cfg, suite, &run, &pool)?;
        let f = file(&format!("check_{}.json", suite.name()));
        write_json(&f, &r)?;
        out.record(&f);
        if let Some(s) = &r.sweep {
            write_sweep(&dir, s, &mut out)?;
        }
        reports.push(r);
    }
    let margins: Vec<Margin> = reports.iter().flat_map(|r| r.margins.clone()).collect();
    write_csv(&file("margins.csv"), &margins_header(), margin_rows(&margins))?;
    out.record(&file("margins.csv"));
    let pass = reports.iter().all(|r| r.pass);
    let report = RunReport { pass, checks: reports.iter().map(|r| (r.suite.name(), r)).collect() };
    write_json(&file("report.json"), &report)?;
    out.record(&file("report.json"));
    let manifest = Manifest::build(&as_configured, &dir, &out.files)?;
    write_json(&file("manifest.json"), &manifest)?;
    Ok(exit_for(pass))
}
