//! Norms of solver trajectories and the a priori inequalities they obey.
//!
//! The energy checks use explicit constants: with `G = ||grad u||^p_{L^p}`
//! and `B = int_0^T ||b(u - w)||^2_{L^2} dt`,
//!
//! * strong: `sup (1/p) G + int ||du/dt||^2 + ||div S||^2 <= (3/p) G_0 + 3 B`,
//! * weak: `sup (1/4) ||u||^2 + int G <= ||u_0||^2 + 2 T B`,
//! * Hölder: `sup ||u||^2 + [u]^2_{1/2} <= 4 ||u_0||^2 + (3/p) G_0 + (3 + 8T) B`,
//!
//! each allowed a relative slack of `ESTIMATE_SLACK`.

use serde::{Deserialize, Serialize};

use crate::averaging::Averager;
use crate::error::{Error, Result};
use crate::lattice::GridField;
use crate::numeric::CompensatedSum;
use crate::occupation::{sobolev_norm, LocalTimeDensity};
use crate::plaplace::{l2_squared, StateTrajectory};
use crate::sewing::{dyadic_sewing, Germ, SewingResult};

pub const ESTIMATE_SLACK: f64 = 0.05;
/// Largest tolerated max/min ratio of the uniform-bound LHS across a sweep.
pub const SWEEP_RATIO: f64 = 5.0;
/// Largest relative residual between the sewn control and its direct sum.
pub const SEWING_IDENTITY_TOL: f64 = 0.05;
/// Relative growth allowed for the distance of two trajectories.
pub const CONTRACTION_TOL: f64 = 1e-6;
/// Minimum growth of the control quantity per ladder step for a divergence signature.
pub const DIVERGENCE_GROWTH: f64 = 1.5;
/// Controls below this are round-off, and their ratios carry no signal.
pub const CONTROL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub p: f64,
    pub horizon: f64,
    /// `t_0 = 0, t_1, ..., t_M`.
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub grad_lp: Vec<f64>,
    pub sup: Vec<f64>,
    /// Running `int_0^t ||du/dt||^2`.
    pub cum_dt_sq: Vec<f64>,
    /// Running `int_0^t ||div S||^2`.
    pub cum_div_sq: Vec<f64>,
    /// Running `int_0^t ||drift||^2`.
    pub cum_drift_sq: Vec<f64>,
    /// Running `int_0^t ||grad u||^p_{L^p}`.
    pub cum_grad_p: Vec<f64>,
    /// `[u]_{C^{0,1/2} L^2}` over dyadic snapshot pairs.
    pub holder_half: f64,
}

fn running(values: impl Iterator<Item = f64>, dt: f64) -> Vec<f64> {
    let mut acc = CompensatedSum::new();
    let mut out = vec![0.0];
    for v in values {
        acc.add(v * dt);
        out.push(acc.value());
    }
    out
}

impl EnergyReport {
    pub fn from_trajectory(traj: &StateTrajectory) -> Result<Self> {
        let space = traj.space;
        let dim = traj.dim;
        let p = traj.p;
        let dt = traj.grid.dt();
        let g0 = crate::plaplace::gradient_power(&space, &traj.u0, dim, p);
        let mut times = vec![0.0];
        let mut l2 = vec![l2_squared(&space, &traj.u0).sqrt()];
        let mut grad_lp = vec![g0.powf(1.0 / p)];
        let mut sup = vec![crate::plaplace::sup_norm(&traj.u0, dim)];
        for r in &traj.records {
            times.push(r.t);
            l2.push(r.l2_sq.sqrt());
            grad_lp.push(r.grad_p.powf(1.0 / p));
            sup.push(r.sup);
        }
        Ok(Self {
            p,
            horizon: traj.grid.horizon(),
            times,
            l2,
            grad_lp,
            sup,
            cum_dt_sq: running(traj.records.iter().map(|r| r.dt_sq), dt),
            cum_div_sq: running(traj.records.iter().map(|r| r.div_sq), dt),
            cum_drift_sq: running(traj.records.iter().map(|r| r.drift_sq), dt),
            cum_grad_p: running(traj.records.iter().map(|r| r.grad_p), dt),
            holder_half: holder_half_seminorm(traj)?,
        })
    }

    pub fn u0_l2_sq(&self) -> f64 {
        self.l2[0] * self.l2[0]
    }

    pub fn u0_grad_p(&self) -> f64 {
        self.grad_lp[0].powf(self.p)
    }

    /// `int_0^T ||b(u - w)||^2_{L^2}`.
    pub fn control(&self) -> f64 {
        *self.cum_drift_sq.last().unwrap()
    }

    pub fn sup_l2_sq(&self) -> f64 {
        self.l2.iter().fold(0.0f64, |m, v| m.max(v * v))
    }

    pub fn sup_grad_p(&self) -> f64 {
        self.grad_lp.iter().fold(0.0f64, |m, v| m.max(v.powf(self.p)))
    }

    /// `||u||^2_{C^{0,1/2} L^2} = sup ||u||^2 + [u]^2_{1/2}`.
    pub fn holder_norm_sq(&self) -> f64 {
        self.sup_l2_sq() + self.holder_half * self.holder_half
    }

    /// `sup ||grad u||^p + ||u||^2_{C^{0,1/2} L^2}`.
    pub fn uniform_bound_lhs(&self) -> f64 {
        self.sup_grad_p() + self.holder_norm_sq()
    }
}

/// `sup ||u_t - u_s||_{L^2} / |t - s|^{1/2}` over dyadic pairs of snapshots.
pub fn holder_half_seminorm(traj: &StateTrajectory) -> Result<f64> {
    let n = traj.snapshots.len() - 1;
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Contract(format!("need 2^k + 1 snapshots, got {}", n + 1)));
    }
    let dt = traj.grid.dt();
    let mut sup = 0.0f64;
    let mut lag = 1;
    while lag <= n {
        for i in (0..n).step_by(lag) {
            let a = &traj.snapshots[i];
            let b = &traj.snapshots[i + lag];
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let span = (traj.snapshot_steps[i + lag] - traj.snapshot_steps[i]) as f64 * dt;
            sup = sup.max(l2_squared(&traj.space, &d).sqrt() / span.sqrt());
        }
        lag *= 2;
    }
    Ok(sup)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub pass: bool,
}

impl EstimateCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        Self { lhs, rhs, margin, pass: margin >= -ESTIMATE_SLACK * rhs }
    }
}

pub fn check_strong_estimate(r: &EnergyReport) -> EstimateCheck {
    let lhs = r.sup_grad_p() / r.p + r.cum_dt_sq.last().unwrap() + r.cum_div_sq.last().unwrap();
    let rhs = 3.0 / r.p * r.u0_grad_p() + 3.0 * r.control();
    EstimateCheck::new(lhs, rhs)
}

pub fn check_weak_estimate(r: &EnergyReport) -> EstimateCheck {
    let lhs = 0.25 * r.sup_l2_sq() + r.cum_grad_p.last().unwrap();
    let rhs = r.u0_l2_sq() + 2.0 * r.horizon * r.control();
    EstimateCheck::new(lhs, rhs)
}

pub fn check_holder_bound(r: &EnergyReport) -> EstimateCheck {
    let lhs = r.holder_norm_sq();
    let rhs = 4.0 * r.u0_l2_sq() + 3.0 / r.p * r.u0_grad_p() + (3.0 + 8.0 * r.horizon) * r.control();
    EstimateCheck::new(lhs, rhs)
}

/// Every `a` with `a^2 <= K + C a` lies in `[C/2 - sqrt(K + C^2/4), C/2 + sqrt(K + C^2/4)]`.
pub fn algebraic_bound(k: f64, c: f64) -> Result<(f64, f64)> {
    let disc = k + 0.25 * c * c;
    if disc < 0.0 {
        return Err(Error::Infeasible { k, c });
    }
    let root = disc.sqrt();
    Ok((0.5 * c - root, 0.5 * c + root))
}

/// Ratios `v_{i+1} / v_i` along a ladder.
pub fn growth_factors(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceVerdict {
    pub controls: Vec<f64>,
    pub growth: Vec<f64>,
    /// Every control above `CONTROL_FLOOR`.
    pub resolved: bool,
    pub pass: bool,
}

/// Whether the control quantity grows by at least `DIVERGENCE_GROWTH`
/// at every step of a refining ladder.
pub fn divergence_signature(controls: &[f64]) -> DivergenceVerdict {
    let growth = growth_factors(controls);
    let resolved = controls.iter().all(|&c| c > CONTROL_FLOOR);
    let pass = resolved && !growth.is_empty() && growth.iter().all(|&g| g >= DIVERGENCE_GROWTH);
    DivergenceVerdict { controls: controls.to_vec(), growth, resolved, pass }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    /// `sup ||grad u||^p + ||u||^2_{C^{0,1/2} L^2}`.
    pub lhs: f64,
    /// `int_0^T ||b_eps(u - w)||^2`.
    pub control: f64,
}

impl SweepPoint {
    pub fn from_report(eps: f64, r: &EnergyReport) -> Self {
        Self { eps, lhs: r.uniform_bound_lhs(), control: r.control() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepVerdict {
    /// `||u_0||^2 + ||grad u_0||^p + ||b||^4_{L^{2q}} ||L||^2_{C^{0,gamma} W^{1,r'}}`.
    pub rhs: f64,
    /// Smallest `c` with `lhs <= c rhs` at every level.
    pub constant: f64,
    /// `max lhs / min lhs`.
    pub lhs_ratio: f64,
    /// Control-quantity growth per ladder step.
    pub control_growth: Vec<f64>,
    pub pass: bool,
}

pub fn uniform_sweep_check(
    points: &[SweepPoint],
    u0_l2_sq: f64,
    u0_grad_p: f64,
    b_l2q: Option<f64>,
    lt_norm: Option<f64>,
) -> Result<SweepVerdict> {
    if points.len() < 4 {
        return Err(Error::Contract(format!("need at least 4 eps levels, got {}", points.len())));
    }
    let (Some(b), Some(l)) = (b_l2q, lt_norm) else {
        return Err(Error::Contract("uniform bound needs the L^{2q} and local-time norms".into()));
    };
    let rhs = u0_l2_sq + u0_grad_p + b.powi(4) * l * l;
    let lhs_max = points.iter().map(|p| p.lhs).fold(f64::NEG_INFINITY, f64::max);
    let lhs_min = points.iter().map(|p| p.lhs).fold(f64::INFINITY, f64::min);
    let lhs_ratio = if lhs_max == 0.0 { 1.0 } else { lhs_max / lhs_min };
    let constant = if rhs > 0.0 { lhs_max / rhs } else if lhs_max == 0.0 { 0.0 } else { f64::INFINITY };
    let controls: Vec<f64> = points.iter().map(|p| p.control).collect();
    Ok(SweepVerdict {
        rhs,
        constant,
        lhs_ratio,
        control_growth: growth_factors(&controls),
        pass: constant.is_finite() && lhs_ratio <= SWEEP_RATIO,
    })
}

/// `gamma` clamped into the open interval `(1/2, 1)`.
pub fn clamp_gamma(gamma: f64) -> f64 {
    gamma.clamp(0.5 + 1e-3, 1.0 - 1e-3)
}

/// `sup_t ||L_t||_{W^{1,rho}} + sup ||L_t - L_s||_{W^{1,rho}} / |t-s|^gamma`
/// with the seminorm taken over dyadic pairs of the time subgrid.
pub fn local_time_holder_norm(lt: &LocalTimeDensity, rho: f64, gamma: f64) -> Result<f64> {
    let n = lt.len() - 1;
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Contract("local-time subgrid must have 2^k intervals".into()));
    }
    let mut sup = 0.0f64;
    for i in 0..lt.len() {
        sup = sup.max(sobolev_norm(&lt.field(i), rho)?);
    }
    let mut semi = 0.0f64;
    let mut lag = 1;
    while lag <= n {
        for i in (0..n).step_by(lag) {
            let d = sobolev_norm(&lt.increment_field(i, i + lag), rho)?;
            semi = semi.max(d / (lt.times()[i + lag] - lt.times()[i]).powf(gamma));
        }
        lag *= 2;
    }
    Ok(sup + semi)
}

/// The scalar germ `A_{s,t} = sum_j (|b|^2 * L_{s,t})(u_s(x_j)) dx` built
/// from cumulative tables `C_k = |b|^2 * L_{t_k}` on a local-time subgrid.
pub struct ControlGerm<'a> {
    tables: Vec<GridField>,
    states: Vec<&'a [f64]>,
    times: Vec<f64>,
    dim: usize,
    dx: f64,
    beta: f64,
}

impl<'a> ControlGerm<'a> {
    /// `b_sq` is the scalar table of `|b|^2`; every subgrid node of `lt`
    /// must be a stored snapshot of `traj`.
    pub fn new(traj: &'a StateTrajectory, b_sq: &GridField, lt: &LocalTimeDensity, beta: f64) -> Result<Self> {
        if b_sq.components() != 1 {
            return Err(Error::Contract("the control germ uses the scalar table |b|^2".into()));
        }
        let averager = Averager::new(b_sq, lt.grid().lattice())?;
        let mut states = Vec::with_capacity(lt.len());
        for &k in lt.time_indices() {
            states.push(traj.state_at(k).ok_or_else(|| {
                Error::Contract(format!("no stored snapshot at step {k}"))
            })?);
        }
        let tables = (0..lt.len()).map(|i| averager.apply(lt.density(i), (0.0, lt.times()[i])).field().clone()).collect();
        Ok(Self {
            tables,
            states,
            times: lt.times().to_vec(),
            dim: traj.dim,
            dx: traj.space.dx(),
            beta,
        })
    }
}

impl Germ for ControlGerm<'_> {
    fn dim(&self) -> usize {
        1
    }
    fn steps(&self) -> usize {
        self.tables.len() - 1
    }
    fn time(&self, k: usize) -> f64 {
        self.times[k]
    }
    fn alpha(&self) -> f64 {
        1.0
    }
    fn beta(&self) -> f64 {
        self.beta
    }
    fn eval(&self, s: usize, t: usize, out: &mut [f64]) {
        let mut acc = CompensatedSum::new();
        let mut a = [0.0];
        let mut b = [0.0];
        for z in self.states[s].chunks(self.dim) {
            self.tables[t].interpolate(z, &mut a);
            self.tables[s].interpolate(z, &mut b);
            acc.add(a[0] - b[0]);
        }
        out[0] = acc.value() * self.dx;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingIdentity {
    pub sewn: f64,
    pub direct: f64,
    /// `|sewn - direct| / max(|direct|, tiny)`; zero when both vanish.
    pub residual: f64,
    pub sewing: SewingResult,
}

/// Compares the sewing of the control germ over `[0, T]` with the directly
/// accumulated `int_0^T ||b(u - w)||^2` of a classical run.
pub fn sewing_identity_check(
    traj: &StateTrajectory,
    b_sq: &GridField,
    lt: &LocalTimeDensity,
) -> Result<SewingIdentity> {
    let germ = ControlGerm::new(traj, b_sq, lt, 1.5)?;
    let n = germ.steps();
    if !n.is_power_of_two() {
        return Err(Error::Contract("local-time subgrid must have 2^k intervals".into()));
    }
    let levels = n.trailing_zeros() as usize;
    let sewing = dyadic_sewing(&germ, 0, n, levels, 0.0)?;
    let sewn = sewing.value[0];
    let dt = traj.grid.dt();
    let mut acc = CompensatedSum::new();
    for r in &traj.records {
        acc.add(r.drift_sq * dt);
    }
    let direct = acc.value();
    let residual = if sewn == 0.0 && direct == 0.0 {
        0.0
    } else {
        (sewn - direct).abs() / direct.abs().max(f64::MIN_POSITIVE)
    };
    Ok(SewingIdentity { sewn, direct, residual, sewing })
}
