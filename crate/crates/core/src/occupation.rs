//! Occupation measures and local times of sampled paths.
//!
//! The local time at a path node `t_k` is estimated by the time-weighted
//! histogram of `w_0, ..., w_{k-1}` (each node carries mass `dt`), optionally
//! smoothed by a truncated Gaussian. Its total mass is exactly `t_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{gaussian_smooth, GridField, Lattice};
use crate::numeric::{conjugate, linear_fit, CompensatedSum};
use crate::paths::SamplePath;

/// Largest admissible total bin count.
pub const MAX_TOTAL_BINS: usize = 1 << 24;
/// Smallest admissible bin count per axis.
pub const MIN_BINS: usize = 8;

/// Uniform bins on a box in value space; nodes sit at bin centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    bounds: Vec<(f64, f64)>,
    bins: usize,
    lattice: Lattice,
}

impl ValueGrid {
    pub fn new(bounds: Vec<(f64, f64)>, bins: usize) -> Result<Self> {
        let dim = bounds.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::Domain(format!("value dimension must be 1, 2 or 3, got {dim}")));
        }
        if bins < MIN_BINS {
            return Err(Error::Domain(format!("need at least {MIN_BINS} bins, got {bins}")));
        }
        if bins.checked_pow(dim as u32).is_none_or(|n| n > MAX_TOTAL_BINS) {
            return Err(Error::Domain(format!("{bins}^{dim} bins exceed {MAX_TOTAL_BINS}")));
        }
        if bounds.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
            return Err(Error::Domain(format!("invalid bounds {bounds:?}")));
        }
        let spacing: Vec<f64> = bounds.iter().map(|(a, b)| (b - a) / bins as f64).collect();
        let origin = bounds.iter().zip(&spacing).map(|((a, _), h)| a + 0.5 * h).collect();
        let lattice = Lattice::new(origin, spacing, vec![bins; dim])?;
        Ok(Self { bounds, bins, lattice })
    }

    /// Box covering the range of `path` padded by `padding` on every side.
    pub fn covering(path: &SamplePath, padding: f64, bins: usize) -> Result<Self> {
        if !(padding >= 0.0) {
            return Err(Error::Domain(format!("padding must be non-negative, got {padding}")));
        }
        let pad = padding.max(1e-9);
        Self::new(path.range().into_iter().map(|(lo, hi)| (lo - pad, hi + pad)).collect(), bins)
    }

    /// Cubic box with bin width exactly `h`, centered on the path range and
    /// padded by at least `padding`. Bin counts round up to a power of two.
    pub fn covering_with_width(path: &SamplePath, padding: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("bin width must be positive, got {h}")));
        }
        let range = path.range();
        let span = range.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max) + 2.0 * padding;
        let bins = ((span / h).ceil() as usize).max(MIN_BINS).next_power_of_two();
        let half = 0.5 * bins as f64 * h;
        let bounds = range
            .iter()
            .map(|(lo, hi)| {
                let mid = 0.5 * (lo + hi);
                let mid = (mid / h).round() * h;
                (mid - half, mid + half)
            })
            .collect();
        Self::new(bounds, bins)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.lattice.spacing()[axis]
    }

    pub fn bin_volume(&self) -> f64 {
        self.lattice.cell_volume()
    }

    pub fn total_bins(&self) -> usize {
        self.lattice.len()
    }

    /// Flat bin containing `z`; the upper box face belongs to the last bin.
    pub fn bin_of(&self, z: &[f64]) -> Option<usize> {
        let mut flat = 0usize;
        for (a, &x) in z.iter().enumerate() {
            let (lo, hi) = self.bounds[a];
            if !(x >= lo && x <= hi) {
                return None;
            }
            let i = (((x - lo) / self.width(a)) as usize).min(self.bins - 1);
            flat = flat * self.bins + i;
        }
        Some(flat)
    }

    pub fn center(&self, bin: usize) -> Vec<f64> {
        self.lattice.node(bin)
    }
}

fn add_occupation(
    path: &SamplePath,
    grid: &ValueGrid,
    range: std::ops::Range<usize>,
    weight: f64,
    density: &mut [f64],
) -> Result<()> {
    for k in range {
        let bin = grid
            .bin_of(path.value(k))
            .ok_or(Error::OutOfBounds { index: k, value: path.value(k)[0] })?;
        density[bin] += weight;
    }
    Ok(())
}

fn check_dims(path: &SamplePath, grid: &ValueGrid) -> Result<()> {
    if path.dim() != grid.dim() {
        return Err(Error::Contract(format!(
            "path dimension {} differs from grid dimension {}",
            path.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Histogram density of `w_{t_k}`, `k < t_idx`, each node weighted by `dt`.
pub fn occupation_histogram(path: &SamplePath, t_idx: usize, grid: &ValueGrid) -> Result<GridField> {
    check_dims(path, grid)?;
    if t_idx > path.grid().steps() {
        return Err(Error::Contract(format!("time index {t_idx} beyond the path grid")));
    }
    let mut field = GridField::zeros(grid.lattice().clone(), 1);
    let weight = path.grid().dt() / grid.bin_volume();
    add_occupation(path, grid, 0..t_idx, weight, field.data_mut())?;
    Ok(field)
}

/// Local times `L_t` on a time subgrid, with optional smoothing.
#[derive(Debug, Clone)]
pub struct LocalTimeDensity {
    grid: ValueGrid,
    time_indices: Vec<usize>,
    times: Vec<f64>,
    densities: Vec<Vec<f64>>,
    bandwidth: f64,
}

/// Every `stride`-th path node, including both endpoints.
pub fn strided_subgrid(steps: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || steps % stride != 0 {
        return Err(Error::Contract(format!("stride {stride} does not divide {steps} steps")));
    }
    Ok((0..=steps).step_by(stride).collect())
}

pub fn local_time_family(
    path: &SamplePath,
    time_indices: &[usize],
    grid: &ValueGrid,
    bandwidth: f64,
) -> Result<LocalTimeDensity> {
    check_dims(path, grid)?;
    if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
        return Err(Error::Domain(format!("bandwidth must be non-negative, got {bandwidth}")));
    }
    if time_indices.is_empty()
        || time_indices.windows(2).any(|w| w[0] >= w[1])
        || *time_indices.last().unwrap() > path.grid().steps()
    {
        return Err(Error::Contract("time subgrid must be strictly increasing path nodes".into()));
    }
    let weight = path.grid().dt() / grid.bin_volume();
    let mut raw = vec![0.0; grid.total_bins()];
    let mut done = 0usize;
    let mut densities = Vec::with_capacity(time_indices.len());
    for &t_idx in time_indices {
        add_occupation(path, grid, done..t_idx, weight, &mut raw)?;
        done = t_idx;
        if bandwidth > 0.0 {
            let field = GridField::from_data(grid.lattice().clone(), 1, raw.clone())?;
            densities.push(gaussian_smooth(&field, bandwidth).into_data());
        } else {
            densities.push(raw.clone());
        }
    }
    let times = time_indices.iter().map(|&k| path.grid().time(k)).collect();
    Ok(LocalTimeDensity {
        grid: grid.clone(),
        time_indices: time_indices.to_vec(),
        times,
        densities,
        bandwidth,
    })
}

impl LocalTimeDensity {
    pub fn grid(&self) -> &ValueGrid {
        &self.grid
    }

    pub fn time_indices(&self) -> &[usize] {
        &self.time_indices
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn density(&self, i: usize) -> &[f64] {
        &self.densities[i]
    }

    pub fn field(&self, i: usize) -> GridField {
        GridField::from_data(self.grid.lattice().clone(), 1, self.densities[i].clone())
            .expect("density matches its grid")
    }

    /// `L_{t_j} - L_{t_i}` over subgrid positions `i <= j`.
    pub fn increment(&self, i: usize, j: usize) -> Vec<f64> {
        self.densities[j].iter().zip(&self.densities[i]).map(|(b, a)| b - a).collect()
    }

    pub fn increment_field(&self, i: usize, j: usize) -> GridField {
        GridField::from_data(self.grid.lattice().clone(), 1, self.increment(i, j))
            .expect("density matches its grid")
    }

    /// Position of path node `t_idx` in the subgrid.
    pub fn position(&self, t_idx: usize) -> Option<usize> {
        self.time_indices.binary_search(&t_idx).ok()
    }

    /// `sum L_t h^N` at subgrid position `i`.
    pub fn mass(&self, i: usize) -> f64 {
        let mut acc = CompensatedSum::new();
        for &v in &self.densities[i] {
            acc.add(v);
        }
        acc.value() * self.grid.bin_volume()
    }

    /// Largest `|mass(i) - t_i|` over the subgrid.
    pub fn mass_residual(&self) -> f64 {
        (0..self.len()).map(|i| (self.mass(i) - self.times[i]).abs()).fold(0.0, f64::max)
    }
}

/// Left-Riemann sum of `int_0^t f(w_s) ds` over the path nodes before `t_idx`.
pub fn occupation_integral(
    f: impl Fn(&[f64]) -> f64,
    path: &SamplePath,
    t_idx: usize,
) -> Result<f64> {
    if t_idx > path.grid().steps() {
        return Err(Error::Contract(format!("time index {t_idx} beyond the path grid")));
    }
    let mut acc = CompensatedSum::new();
    for k in 0..t_idx {
        acc.add(f(path.value(k)));
    }
    Ok(acc.value() * path.grid().dt())
}

/// `sum f(z_bin) L(bin) h^N`: the spatial side of the occupation formula.
pub fn pair_with_density(f: impl Fn(&[f64]) -> f64, grid: &ValueGrid, density: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for (bin, &l) in density.iter().enumerate() {
        if l != 0.0 {
            acc.add(f(&grid.center(bin)) * l);
        }
    }
    acc.value() * grid.bin_volume()
}

/// `W^{1,rho}` grid norm of a density.
pub fn sobolev_norm(density: &GridField, rho: f64) -> Result<f64> {
    if !(rho >= 1.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("Sobolev exponent must lie in [1, inf), got {rho}")));
    }
    Ok(density.sobolev_norm(rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRegularity {
    pub exponent: f64,
    pub degenerate: bool,
    /// Lags in time units.
    pub lags: Vec<f64>,
    /// Largest increment norm per lag.
    pub norms: Vec<f64>,
}

/// Hölder exponent of `t -> L_t` in `W^{1,rho}`, fitted over dyadic lags of
/// the time subgrid (disjoint pairs per lag, sup aggregation).
pub fn estimate_time_regularity(lt: &LocalTimeDensity, rho: f64) -> Result<TimeRegularity> {
    let n = lt.len() - 1;
    if n < 32 {
        return Err(Error::Contract(format!("need at least 32 time intervals, got {n}")));
    }
    let positions = lt.time_indices();
    let uniform = positions.windows(2).all(|w| w[1] - w[0] == positions[1] - positions[0]);
    if !uniform {
        return Err(Error::Contract("time subgrid must be uniform".into()));
    }
    let mut lags = Vec::new();
    let mut norms = Vec::new();
    let mut lag = 1;
    while lag <= n / 4 {
        let mut sup = 0.0f64;
        for i in (0..=n - lag).step_by(lag) {
            let norm = sobolev_norm(&lt.increment_field(i, i + lag), rho)?;
            sup = sup.max(norm);
        }
        lags.push(lt.times()[lag] - lt.times()[0]);
        norms.push(sup);
        lag *= 2;
    }
    if norms.iter().all(|&v| v == 0.0) {
        return Ok(TimeRegularity { exponent: 1.0, degenerate: true, lags, norms });
    }
    if norms.iter().any(|&v| v == 0.0) {
        return Err(Error::Numeric("some lags have vanishing increments".into()));
    }
    let x: Vec<f64> = lags.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let (slope, _) = linear_fit(&x, &y).ok_or(Error::Numeric("degenerate lag fit".into()))?;
    Ok(TimeRegularity { exponent: slope, degenerate: false, lags, norms })
}

/// Exponent bookkeeping for local-time regularity and potential
/// integrability: which `(H, lambda, gamma, r, q, eta)` let the existence
/// theory apply in dimension `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityBudget {
    pub hurst: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub r: f64,
    pub q: f64,
    pub eta: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetVerdict {
    pub hurst_range: bool,
    pub lambda_local_time: bool,
    pub gamma_local_time: bool,
    pub gamma_above_half: bool,
    pub lambda_sobolev: bool,
    pub lambda_singularity: bool,
    pub eta_range: bool,
    pub exponent_order: bool,
    pub admissible: bool,
}

impl RegularityBudget {
    pub fn r_conjugate(&self) -> f64 {
        conjugate(self.r)
    }

    pub fn q_conjugate(&self) -> f64 {
        conjugate(self.q)
    }

    /// Supremum of spatial regularity the local time enjoys.
    pub fn lambda_ceiling(&self) -> f64 {
        1.0 / (2.0 * self.hurst) - self.dim as f64 / 2.0
    }

    /// Admissible time-Hölder exponents `[0, 1 - (lambda + N/2) H)`.
    pub fn gamma_interval(&self) -> (f64, f64) {
        (0.0, 1.0 - (self.lambda + self.dim as f64 / 2.0) * self.hurst)
    }

    /// Largest Hurst parameter that makes the example potential admissible.
    pub fn hurst_threshold(eta: f64, dim: usize) -> f64 {
        1.0 / (2.0 - 4.0 * eta).max(dim as f64)
    }

    pub fn verdict(&self) -> BudgetVerdict {
        let n = self.dim as f64;
        let hurst_range = self.hurst > 0.0 && self.hurst < 1.0 / n;
        let lambda_local_time = self.lambda >= 1.0 && self.lambda < self.lambda_ceiling();
        let gamma_local_time = self.gamma >= 0.0 && self.gamma < self.gamma_interval().1;
        let gamma_above_half = self.gamma > 0.5 && self.gamma < 1.0;
        let lambda_sobolev = self.lambda >= 1.0 && self.lambda < 1.0 + n / 2.0;
        let lambda_singularity = self.lambda > 1.0 - (n + 4.0 * self.eta) / 2.0;
        let eta_range = self.eta > -n / 2.0 && self.eta < 0.0;
        let exponent_order = self.r >= 1.0 && self.q >= self.r && self.q.is_finite();
        let admissible = hurst_range
            && lambda_local_time
            && gamma_local_time
            && gamma_above_half
            && lambda_sobolev
            && lambda_singularity
            && eta_range
            && exponent_order;
        BudgetVerdict {
            hurst_range,
            lambda_local_time,
            gamma_local_time,
            gamma_above_half,
            lambda_sobolev,
            lambda_singularity,
            eta_range,
            exponent_order,
            admissible,
        }
    }
}
