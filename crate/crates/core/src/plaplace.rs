//! Semi-implicit finite differences for the evolutionary p-Laplace system
//! `du/dt - div S(grad u) = drift` on `(0, 1)` with zero Dirichlet data,
//! `S(xi) = (|xi|^2 + delta^2)^((p-2)/2) xi`.
//!
//! Fields store the `J` interior nodes only, node-major with `N` values per
//! node; the boundary values are identically zero. Each step freezes the
//! diffusivity at the current iterate and solves one tridiagonal system per
//! component (lagged diffusivity), optionally re-freezing until the update
//! settles.

use serde::{Deserialize, Serialize};

use crate::averaging::Averager;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::occupation::LocalTimeDensity;
use crate::paths::{SamplePath, TimeGrid};
use crate::potential::{PotentialTable, VectorField};
use crate::tridiagonal::solve_tridiagonal;

/// Steps between two stability audits.
pub const AUDIT_INTERVAL: usize = 64;
/// Largest sup-norm growth tolerated between audits.
pub const AUDIT_GROWTH: f64 = 10.0;
pub const DEFAULT_PICARD_TOL: f64 = 1e-10;
pub const MIN_RELAXATION: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceGrid1D {
    interior: usize,
}

impl SpaceGrid1D {
    pub fn new(interior: usize) -> Result<Self> {
        if interior < 8 {
            return Err(Error::Domain(format!("need at least 8 interior nodes, got {interior}")));
        }
        Ok(Self { interior })
    }

    pub fn interior(&self) -> usize {
        self.interior
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.interior + 1) as f64
    }

    /// Coordinate of interior node `j` (0-based), i.e. `(j + 1) dx`.
    pub fn x(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.dx()
    }

    /// Samples `f(x) -> R^dim` at the interior nodes.
    pub fn sample(&self, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.interior * dim);
        for j in 0..self.interior {
            let v = f(self.x(j));
            assert_eq!(v.len(), dim);
            out.extend(v);
        }
        out
    }

    /// Interior field padded with the zero boundary values.
    pub fn with_boundary(&self, u: &[f64], dim: usize) -> Vec<f64> {
        let mut full = vec![0.0; (self.interior + 2) * dim];
        full[dim..dim * (self.interior + 1)].copy_from_slice(u);
        full
    }
}

fn diffusivity(norm_sq: f64, p: f64, delta: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else {
        (norm_sq + delta * delta).powf(0.5 * (p - 2.0))
    }
}

/// `(|xi|^2 + delta^2)^((p-2)/2) xi`.
pub fn stress(xi: &[f64], p: f64, delta: f64, out: &mut [f64]) {
    let n2: f64 = xi.iter().map(|v| v * v).sum();
    let a = if n2 == 0.0 && delta == 0.0 { 0.0 } else { diffusivity(n2, p, delta) };
    out.iter_mut().zip(xi).for_each(|(o, x)| *o = a * x);
}

/// Forward differences on the `J + 1` edges of a field given with boundary values.
fn edge_gradients(full: &[f64], dim: usize, dx: f64) -> Vec<f64> {
    let edges = full.len() / dim - 1;
    let mut g = vec![0.0; edges * dim];
    for e in 0..edges {
        for c in 0..dim {
            g[e * dim + c] = (full[(e + 1) * dim + c] - full[e * dim + c]) / dx;
        }
    }
    g
}

/// `[S(D+u)_j - S(D+u)_{j-1}] / dx` at the interior nodes of a field given
/// together with its two boundary values (`J + 2` nodes).
pub fn discrete_div_s_full(full: &[f64], dim: usize, dx: f64, p: f64, delta: f64) -> Vec<f64> {
    let g = edge_gradients(full, dim, dx);
    let edges = g.len() / dim;
    let mut s = vec![0.0; g.len()];
    for e in 0..edges {
        stress(&g[e * dim..(e + 1) * dim], p, delta, &mut s[e * dim..(e + 1) * dim]);
    }
    let interior = edges - 1;
    let mut out = vec![0.0; interior * dim];
    for j in 0..interior {
        for c in 0..dim {
            out[j * dim + c] = (s[(j + 1) * dim + c] - s[j * dim + c]) / dx;
        }
    }
    out
}

/// Discrete `div S(grad u)` of an interior field with zero boundary values.
pub fn discrete_div_s(space: &SpaceGrid1D, u: &[f64], dim: usize, p: f64, delta: f64) -> Vec<f64> {
    discrete_div_s_full(&space.with_boundary(u, dim), dim, space.dx(), p, delta)
}

/// `sum_e |D+u_e|^p dx` over the `J + 1` edges.
pub fn gradient_power(space: &SpaceGrid1D, u: &[f64], dim: usize, p: f64) -> f64 {
    let g = edge_gradients(&space.with_boundary(u, dim), dim, space.dx());
    let mut acc = CompensatedSum::new();
    for e in g.chunks(dim) {
        acc.add(e.iter().map(|v| v * v).sum::<f64>().powf(0.5 * p));
    }
    acc.value() * space.dx()
}

/// `(1/p) sum_e |D+u_e|^p dx`.
pub fn energy(space: &SpaceGrid1D, u: &[f64], dim: usize, p: f64) -> f64 {
    gradient_power(space, u, dim, p) / p
}

/// `sum_j |u_j|^2 dx`.
pub fn l2_squared(space: &SpaceGrid1D, u: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in u {
        acc.add(v * v);
    }
    acc.value() * space.dx()
}

pub fn sup_norm(u: &[f64], dim: usize) -> f64 {
    u.chunks(dim).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub p: f64,
    pub delta_reg: f64,
    pub space: SpaceGrid1D,
    /// Extra re-freezes of the diffusivity per step.
    pub picard_max: usize,
    pub picard_tol: f64,
    /// Initial weight of the newest solve when re-freezing the diffusivity;
    /// halved whenever an update fails to halve the previous one, down to
    /// `MIN_RELAXATION`.
    pub picard_relaxation: f64,
    /// Store every `snapshot_stride`-th state; zero picks a stride that keeps
    /// at most 4097 snapshots.
    pub snapshot_stride: usize,
}

impl SolverConfig {
    pub fn new(p: f64, space: SpaceGrid1D) -> Self {
        Self {
            p,
            delta_reg: 1e-6,
            space,
            picard_max: if p == 2.0 { 0 } else { 50 },
            picard_tol: DEFAULT_PICARD_TOL,
            picard_relaxation: 1.0,
            snapshot_stride: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::Domain(format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.delta_reg > 0.0 && self.delta_reg <= 1e-2) {
            return Err(Error::Domain(format!(
                "gradient regularization must lie in (0, 1e-2], got {}",
                self.delta_reg
            )));
        }
        if !(self.picard_relaxation > 0.0 && self.picard_relaxation <= 1.0) {
            return Err(Error::Domain("Picard relaxation must lie in (0, 1]".into()));
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::Domain("Picard tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Snapshot stride used for a grid of `steps` steps.
    pub fn stride_for(&self, steps: usize) -> usize {
        if self.snapshot_stride == 0 {
            (steps / 4096).max(1)
        } else {
            self.snapshot_stride
        }
    }
}

/// Supplies the nodal drift rate applied during step `k -> k + 1`.
pub trait DriftEvaluator {
    fn drift(&mut self, k: usize, u: &[f64], out: &mut [f64]) -> Result<()>;
}

pub struct ZeroDrift;

impl DriftEvaluator for ZeroDrift {
    fn drift(&mut self, _k: usize, _u: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }
}

/// `b(u_k(x_j) - w_{t_k})`.
pub struct ClassicalDrift<'a> {
    b: &'a dyn VectorField,
    path: &'a SamplePath,
}

impl<'a> ClassicalDrift<'a> {
    pub fn new(b: &'a dyn VectorField, path: &'a SamplePath) -> Result<Self> {
        if b.dim() != path.dim() {
            return Err(Error::Contract("potential and path dimensions differ".into()));
        }
        Ok(Self { b, path })
    }
}

impl DriftEvaluator for ClassicalDrift<'_> {
    fn drift(&mut self, k: usize, u: &[f64], out: &mut [f64]) -> Result<()> {
        let dim = self.b.dim();
        let w = self.path.value(k);
        let mut z = vec![0.0; dim];
        for (uj, oj) in u.chunks(dim).zip(out.chunks_mut(dim)) {
            for c in 0..dim {
                z[c] = uj[c] - w[c];
            }
            self.b.eval(&z, oj)?;
        }
        Ok(())
    }
}

/// One averaging table `b * L_{S,S'}` per macro step, evaluated at the
/// state at `S` and spread uniformly over the macro step.
pub struct RobustifiedDrift<'a> {
    averager: Averager,
    lt: &'a LocalTimeDensity,
    macro_steps: usize,
    dt: f64,
    dim: usize,
    cache: Vec<f64>,
}

impl<'a> RobustifiedDrift<'a> {
    pub fn new(table: &PotentialTable, lt: &'a LocalTimeDensity, grid: &TimeGrid) -> Result<Self> {
        let idx = lt.time_indices();
        if idx.len() < 2 || idx[0] != 0 || *idx.last().unwrap() != grid.steps() {
            return Err(Error::Contract("macro subgrid must span the whole time grid".into()));
        }
        let macro_steps = idx[1];
        if idx.iter().enumerate().any(|(i, &k)| k != i * macro_steps) {
            return Err(Error::Contract("macro subgrid must be uniform".into()));
        }
        Ok(Self {
            averager: Averager::for_local_time(table, lt)?,
            lt,
            macro_steps,
            dt: grid.dt(),
            dim: lt.grid().dim(),
            cache: Vec::new(),
        })
    }

    pub fn macro_steps(&self) -> usize {
        self.macro_steps
    }
}

impl DriftEvaluator for RobustifiedDrift<'_> {
    fn drift(&mut self, k: usize, u: &[f64], out: &mut [f64]) -> Result<()> {
        if k % self.macro_steps == 0 {
            let m = k / self.macro_steps;
            let table = self.averager.increment(self.lt, m, m + 1);
            let scale = 1.0 / (self.macro_steps as f64 * self.dt);
            self.cache = vec![0.0; u.len()];
            for (uj, cj) in u.chunks(self.dim).zip(self.cache.chunks_mut(self.dim)) {
                table.eval(uj, cj);
                cj.iter_mut().for_each(|v| *v *= scale);
            }
        }
        out.copy_from_slice(&self.cache);
        Ok(())
    }
}

/// Per-step quantities for `k -> k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    /// Time at the end of the step.
    pub t: f64,
    /// `||u_{k+1}||^2_{L^2}`.
    pub l2_sq: f64,
    /// `||grad u_{k+1}||^p_{L^p}`.
    pub grad_p: f64,
    /// `||(u_{k+1} - u_k) / dt||^2_{L^2}`.
    pub dt_sq: f64,
    /// `||div S(grad u_{k+1})||^2_{L^2}`.
    pub div_sq: f64,
    /// `||drift_k||^2_{L^2}` of the applied drift rate.
    pub drift_sq: f64,
    pub sup: f64,
    pub solves: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub space: SpaceGrid1D,
    pub dim: usize,
    pub p: f64,
    pub grid: TimeGrid,
    pub u0: Vec<f64>,
    /// Step indices of the stored snapshots.
    pub snapshot_steps: Vec<usize>,
    pub snapshots: Vec<Vec<f64>>,
    pub records: Vec<StepRecord>,
    /// Accumulated `sum_k drift_k dt` per node.
    pub accumulated_drift: Vec<f64>,
}

impl StateTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.snapshots.last().expect("final state is always stored")
    }

    pub fn flagged_steps(&self) -> usize {
        self.records.iter().filter(|r| !r.converged).count()
    }

    /// Snapshot at step `k`, if stored.
    pub fn state_at(&self, k: usize) -> Option<&[f64]> {
        self.snapshot_steps.binary_search(&k).ok().map(|i| self.snapshots[i].as_slice())
    }
}

/// Advances one trajectory step by step.
pub struct Stepper {
    cfg: SolverConfig,
    dim: usize,
    dt: f64,
    k: usize,
    u: Vec<f64>,
    drift: Vec<f64>,
    last_audit_sup: f64,
    audit_step: usize,
}

impl Stepper {
    pub fn new(cfg: &SolverConfig, grid: &TimeGrid, u0: &[f64], dim: usize) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 || u0.len() != cfg.space.interior() * dim {
            return Err(Error::Contract(format!(
                "initial field has {} values, expected {} x {dim}",
                u0.len(),
                cfg.space.interior()
            )));
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("initial field is not finite".into()));
        }
        Ok(Self {
            cfg: *cfg,
            dim,
            dt: grid.dt(),
            k: 0,
            u: u0.to_vec(),
            drift: vec![0.0; u0.len()],
            last_audit_sup: sup_norm(u0, dim),
            audit_step: 0,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.u
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    /// Drift rate applied in the last step.
    pub fn last_drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn advance(&mut self, drift: &mut dyn DriftEvaluator) -> Result<StepRecord> {
        let cfg = self.cfg;
        let space = cfg.space;
        let dim = self.dim;
        drift.drift(self.k, &self.u, &mut self.drift)?;
        let rhs: Vec<f64> = self.u.iter().zip(&self.drift).map(|(u, d)| u + self.dt * d).collect();
        let (next, solves, converged) = implicit_step(&cfg, &self.u, &rhs, dim, self.dt)?;
        let dx = space.dx();
        let mut dt_sq = CompensatedSum::new();
        for (a, b) in next.iter().zip(&self.u) {
            let d = (a - b) / self.dt;
            dt_sq.add(d * d);
        }
        let div = discrete_div_s(&space, &next, dim, cfg.p, cfg.delta_reg);
        let record = StepRecord {
            k: self.k,
            t: (self.k + 1) as f64 * self.dt,
            l2_sq: l2_squared(&space, &next),
            grad_p: gradient_power(&space, &next, dim, cfg.p),
            dt_sq: dt_sq.value() * dx,
            div_sq: l2_squared(&space, &div),
            drift_sq: l2_squared(&space, &self.drift),
            sup: sup_norm(&next, dim),
            solves,
            converged,
        };
        self.u = next;
        self.k += 1;
        if self.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite state after step {}", self.k)));
        }
        if self.k % AUDIT_INTERVAL == 0 {
            let sup = record.sup;
            if sup > AUDIT_GROWTH * self.last_audit_sup.max(1.0) {
                return Err(Error::Numeric(format!(
                    "instability: sup norm grew from {} at step {} to {} at step {}",
                    self.last_audit_sup, self.audit_step, sup, self.k
                )));
            }
            self.last_audit_sup = sup;
            self.audit_step = self.k;
        }
        Ok(record)
    }
}

/// Solves `(I - dt A_v) u = rhs` with `A_v` the divergence operator frozen
/// at `v`, starting from `v = u_k` and re-freezing up to `picard_max` times.
fn implicit_step(
    cfg: &SolverConfig,
    u_k: &[f64],
    rhs: &[f64],
    dim: usize,
    dt: f64,
) -> Result<(Vec<f64>, usize, bool)> {
    let space = cfg.space;
    let n = space.interior();
    let dx = space.dx();
    let r = dt / (dx * dx);
    let mut frozen = u_k.to_vec();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut solves = 0;
    let mut weight = cfg.picard_relaxation;
    let mut last_change = f64::INFINITY;
    loop {
        let g = edge_gradients(&space.with_boundary(&frozen, dim), dim, dx);
        let a: Vec<f64> = g
            .chunks(dim)
            .map(|e| diffusivity(e.iter().map(|v| v * v).sum(), cfg.p, cfg.delta_reg))
            .collect();
        if let Some(bad) = a.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Numeric(format!("non-positive diffusivity {} on edge {bad}", a[bad])));
        }
        for j in 0..n {
            lower[j] = -r * a[j];
            upper[j] = -r * a[j + 1];
            diag[j] = 1.0 + r * (a[j] + a[j + 1]);
        }
        let mut x = rhs.to_vec();
        solve_tridiagonal(&lower, &diag, &upper, &mut x, dim)?;
        solves += 1;
        if cfg.p == 2.0 {
            return Ok((x, solves, true));
        }
        if cfg.picard_max == 0 {
            return Ok((x, solves, true));
        }
        let change: f64 = x.iter().zip(&frozen).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let size: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if solves > 1 && change <= cfg.picard_tol * size.max(f64::MIN_POSITIVE) {
            return Ok((x, solves, true));
        }
        if change == 0.0 {
            return Ok((x, solves, true));
        }
        if solves > cfg.picard_max {
            return Ok((x, solves, false));
        }
        if change > 0.5 * last_change {
            weight = (0.5 * weight).max(MIN_RELAXATION);
        }
        last_change = change;
        let w = weight;
        frozen.iter_mut().zip(&x).for_each(|(f, v)| *f = w * v + (1.0 - w) * *f);
    }
}

/// Runs the scheme over the whole time grid.
pub fn solve(
    cfg: &SolverConfig,
    grid: &TimeGrid,
    u0: &[f64],
    dim: usize,
    drift: &mut dyn DriftEvaluator,
) -> Result<StateTrajectory> {
    let steps = grid.steps();
    let stride = cfg.stride_for(steps);
    if stride == 0 || steps % stride != 0 {
        return Err(Error::Contract(format!("snapshot stride {stride} does not divide {steps}")));
    }
    let mut stepper = Stepper::new(cfg, grid, u0, dim)?;
    let mut snapshot_steps = vec![0];
    let mut snapshots = vec![u0.to_vec()];
    let mut records = Vec::with_capacity(steps);
    let mut accumulated = vec![CompensatedSum::new(); u0.len()];
    for _ in 0..steps {
        let rec = stepper.advance(drift)?;
        for (acc, d) in accumulated.iter_mut().zip(stepper.last_drift()) {
            acc.add(d * grid.dt());
        }
        records.push(rec);
        if stepper.step_index() % stride == 0 {
            snapshot_steps.push(stepper.step_index());
            snapshots.push(stepper.state().to_vec());
        }
    }
    Ok(StateTrajectory {
        space: cfg.space,
        dim,
        p: cfg.p,
        grid: *grid,
        u0: u0.to_vec(),
        snapshot_steps,
        snapshots,
        records,
        accumulated_drift: accumulated.iter().map(|a| a.value()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSeries {
    /// `||u_k - v_k||_{L^2}` for `k = 0..=M`.
    pub distances: Vec<f64>,
    pub initial: f64,
    /// `max_k distance_k / initial` (1 when both starts agree and stay equal).
    pub max_ratio: f64,
}

/// Runs two trajectories driven by the same drift law in lockstep.
pub fn contraction_experiment(
    cfg: &SolverConfig,
    grid: &TimeGrid,
    u0: &[f64],
    v0: &[f64],
    dim: usize,
    drift_u: &mut dyn DriftEvaluator,
    drift_v: &mut dyn DriftEvaluator,
) -> Result<ContractionSeries> {
    let mut a = Stepper::new(cfg, grid, u0, dim)?;
    let mut b = Stepper::new(cfg, grid, v0, dim)?;
    let dist = |x: &[f64], y: &[f64]| {
        let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        l2_squared(&cfg.space, &d).sqrt()
    };
    let mut distances = vec![dist(u0, v0)];
    for _ in 0..grid.steps() {
        a.advance(drift_u)?;
        b.advance(drift_v)?;
        distances.push(dist(a.state(), b.state()));
    }
    let initial = distances[0];
    let peak = distances.iter().copied().fold(0.0, f64::max);
    let max_ratio = if initial > 0.0 { peak / initial } else if peak == 0.0 { 1.0 } else { f64::INFINITY };
    Ok(ContractionSeries { distances, initial, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{PotentialKind, PotentialSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn stress_examples() {
        let mut o = [0.0];
        stress(&[0.7], 2.0, 0.0, &mut o);
        assert_eq!(o[0], 0.7);
        stress(&[2.0], 4.0, 0.0, &mut o);
        assert_relative_eq!(o[0], 8.0, epsilon = 1e-14);
        stress(&[0.0], 1.5, 1e-3, &mut o);
        assert_eq!(o[0], 0.0);
    }

    #[test]
    fn laplacian_of_the_first_eigenmode() {
        let space = SpaceGrid1D::new(255).unwrap();
        let u = space.sample(1, |x| vec![(PI * x).sin()]);
        let div = discrete_div_s(&space, &u, 1, 2.0, 0.0);
        let dx = space.dx();
        for (j, d) in div.iter().enumerate() {
            let exact = -PI * PI * (PI * space.x(j)).sin();
            assert!((d - exact).abs() < 2.0 * PI.powi(4) * dx * dx);
        }
    }

    #[test]
    fn affine_field_has_no_divergence() {
        let dx = 1.0 / 33.0;
        let full: Vec<f64> = (0..34).map(|j| j as f64 * dx).collect();
        for p in [1.5, 2.0, 3.0, 5.0] {
            let div = discrete_div_s_full(&full, 1, dx, p, 1e-3);
            assert!(div.iter().all(|d| d.abs() < 1e-9), "p = {p}");
        }
    }

    #[test]
    fn p3_divergence_matches_symbolic_derivative() {
        let space = SpaceGrid1D::new(400).unwrap();
        let u = space.sample(1, |x| vec![x * (1.0 - x)]);
        let div = discrete_div_s(&space, &u, 1, 3.0, 0.0);
        for (j, d) in div.iter().enumerate() {
            let x = space.x(j);
            let exact = -4.0 * (1.0 - 2.0 * x).abs();
            assert!((d - exact).abs() < 10.0 * space.dx(), "x = {x}");
        }
    }

    #[test]
    fn energy_examples() {
        let space = SpaceGrid1D::new(511).unwrap();
        assert_eq!(energy(&space, &vec![0.0; 511], 1, 3.0), 0.0);
        let sine = space.sample(1, |x| vec![(PI * x).sin()]);
        assert!((energy(&space, &sine, 1, 2.0) - PI * PI / 4.0).abs() < 1e-4);
        let bump = space.sample(1, |x| vec![x * (1.0 - x)]);
        assert!((energy(&space, &bump, 1, 4.0) - 0.05).abs() < space.dx());
    }

    #[test]
    fn heat_eigenmode_decays_at_the_exact_rate() {
        let space = SpaceGrid1D::new(256).unwrap();
        let grid = TimeGrid::new(0.1, 1024).unwrap();
        let cfg = SolverConfig::new(2.0, space);
        let u0 = space.sample(1, |x| vec![(PI * x).sin()]);
        let traj = solve(&cfg, &grid, &u0, 1, &mut ZeroDrift).unwrap();
        let exact = space.sample(1, |x| vec![(-PI * PI * 0.1).exp() * (PI * x).sin()]);
        let err: Vec<f64> = traj.final_state().iter().zip(&exact).map(|(a, b)| a - b).collect();
        assert!(l2_squared(&space, &err).sqrt() < 1e-3);
    }

    struct ConstantDrift(f64);

    impl DriftEvaluator for ConstantDrift {
        fn drift(&mut self, _k: usize, _u: &[f64], out: &mut [f64]) -> Result<()> {
            out.iter_mut().for_each(|o| *o = self.0);
            Ok(())
        }
    }

    #[test]
    fn constant_drift_step_matches_a_dense_solve() {
        let space = SpaceGrid1D::new(12).unwrap();
        let grid = TimeGrid::new(0.01, 2).unwrap();
        let cfg = SolverConfig::new(2.0, space);
        let mut st = Stepper::new(&cfg, &grid, &[0.0; 12], 1).unwrap();
        st.advance(&mut ConstantDrift(3.0)).unwrap();
        // dense Gaussian elimination of (I - dt Lap_h) x = dt c 1
        let n = 12;
        let dt = grid.dt();
        let r = dt / (space.dx() * space.dx());
        let mut m = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            m[i][i] = 1.0 + 2.0 * r;
            if i > 0 {
                m[i][i - 1] = -r;
            }
            if i + 1 < n {
                m[i][i + 1] = -r;
            }
            m[i][n] = dt * 3.0;
        }
        for c in 0..n {
            for rrow in c + 1..n {
                let f = m[rrow][c] / m[c][c];
                for k in c..=n {
                    m[rrow][k] -= f * m[c][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        for (a, b) in st.state().iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_flow_energy_is_non_increasing() {
        let space = SpaceGrid1D::new(64).unwrap();
        let u0 = space.sample(2, |x| vec![(PI * x).sin(), x * (1.0 - x) * 4.0]);
        for p in [1.5, 2.0, 3.0, 4.0] {
            let grid = TimeGrid::new(0.05, 256).unwrap();
            let cfg = SolverConfig::new(p, space);
            let traj = solve(&cfg, &grid, &u0, 2, &mut ZeroDrift).unwrap();
            let mut prev = gradient_power(&space, &u0, 2, p);
            for r in &traj.records {
                assert!(r.grad_p <= prev * (1.0 + 1e-12), "p = {p}, step {}", r.k);
                prev = r.grad_p;
                assert!(r.converged, "p = {p}, step {} solves {}", r.k, r.solves);
            }
        }
    }

    #[test]
    fn classical_scheme_is_first_order_in_time() {
        let space = SpaceGrid1D::new(32).unwrap();
        let spec = PotentialSpec::raw(PotentialKind::Gaussian { amplitude: 2.0, width: 0.5 });
        let b = (spec, 1usize);
        let u0 = space.sample(1, |x| vec![(PI * x).sin()]);
        let cfg = SolverConfig::new(3.0, space);
        let finals: Vec<Vec<f64>> = [64usize, 128, 256, 512]
            .iter()
            .map(|&m| {
                let grid = TimeGrid::new(0.2, m).unwrap();
                let path = SamplePath::from_fn(grid, 1, |t| vec![0.3 * (2.0 * PI * t).sin()]).unwrap();
                let mut drift = ClassicalDrift::new(&b, &path).unwrap();
                solve(&cfg, &grid, &u0, 1, &mut drift).unwrap().final_state().to_vec()
            })
            .collect();
        let diff = |a: &[f64], c: &[f64]| {
            let d: Vec<f64> = a.iter().zip(c).map(|(x, y)| x - y).collect();
            l2_squared(&space, &d).sqrt()
        };
        let d1 = diff(&finals[0], &finals[1]);
        let d2 = diff(&finals[1], &finals[2]);
        let d3 = diff(&finals[2], &finals[3]);
        for ratio in [d1 / d2, d2 / d3] {
            assert!((1.7..2.3).contains(&ratio), "{d1} {d2} {d3}");
        }
    }

    #[test]
    fn instability_aborts() {
        let space = SpaceGrid1D::new(16).unwrap();
        let grid = TimeGrid::new(10.0, 256).unwrap();
        let cfg = SolverConfig::new(2.0, space);
        let b = (PotentialSpec::raw(PotentialKind::Linear { slope: 100.0 }), 1usize);
        let path = SamplePath::zero(grid, 1);
        let mut drift = ClassicalDrift::new(&b, &path).unwrap();
        let u0 = space.sample(1, |x| vec![(PI * x).sin()]);
        assert!(matches!(solve(&cfg, &grid, &u0, 1, &mut drift), Err(Error::Numeric(_))));
    }

    #[test]
    fn contraction_of_a_linear_monotone_drift() {
        let space = SpaceGrid1D::new(64).unwrap();
        let grid = TimeGrid::new(0.2, 512).unwrap();
        let cfg = SolverConfig::new(2.0, space);
        let b = (PotentialSpec::raw(PotentialKind::Linear { slope: -1.0 }), 1usize);
        let path = SamplePath::zero(grid, 1);
        let u0 = space.sample(1, |x| vec![(PI * x).sin()]);
        let v0 = vec![0.0; 64];
        let mut du = ClassicalDrift::new(&b, &path).unwrap();
        let mut dv = ClassicalDrift::new(&b, &path).unwrap();
        let c = contraction_experiment(&cfg, &grid, &u0, &v0, 1, &mut du, &mut dv).unwrap();
        assert_eq!(c.max_ratio, 1.0);
        let lambda = 4.0 / (space.dx() * space.dx()) * (PI * space.dx() / 2.0).sin().powi(2) + 1.0;
        for (k, d) in c.distances.iter().enumerate().skip(1) {
            let t = k as f64 * grid.dt();
            assert!(*d < c.initial);
            let ratio = d / c.initial;
            assert!((ratio - (-lambda * t).exp()).abs() < 0.02, "t = {t}");
        }
        let same = contraction_experiment(&cfg, &grid, &u0, &u0, 1, &mut du, &mut dv).unwrap();
        assert!(same.distances.iter().all(|&d| d == 0.0));
    }
}
