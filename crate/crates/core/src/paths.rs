//! Fractional Brownian motion on a uniform dyadic time grid.
//!
//! Paths are synthesized from the stationary fractional Gaussian noise of
//! their increments. The default generator is the circulant (Davies-Harte)
//! embedding, which is exact in law; when the embedding has eigenvalues below
//! `-EMBEDDING_TOL * max_eigenvalue` the dense Cholesky factorization of the
//! increment covariance is used instead.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{is_power_of_two, linear_fit};

/// Relative tolerance for negative circulant eigenvalues.
pub const EMBEDDING_TOL: f64 = 1e-10;
/// Largest increment count the dense Cholesky fallback accepts.
pub const CHOLESKY_MAX_STEPS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    /// `steps` must be a power of two and at least 2.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 || !is_power_of_two(steps) {
            return Err(Error::Domain(format!(
                "step count must be a power of two >= 2, got {steps}"
            )));
        }
        Ok(Self { horizon, steps })
    }

    /// Unit horizon.
    pub fn unit(steps: usize) -> Result<Self> {
        Self::new(1.0, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Index of the node at time `t`, if `t` is a node up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let k = x.round();
        if k < 0.0 || k > self.steps as f64 || (x - k).abs() > 1e-9 * self.steps as f64 {
            return None;
        }
        Some(k as usize)
    }
}

/// Sampled path `t_k -> w_k in R^N`, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    hurst: Option<f64>,
    seed: Option<u64>,
}

impl SamplePath {
    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("path dimension must be >= 1".into()));
        }
        if values.len() != (grid.steps() + 1) * dim {
            return Err(Error::Contract(format!(
                "expected {} values for {} nodes of dimension {dim}, got {}",
                (grid.steps() + 1) * dim,
                grid.steps() + 1,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite path value at node {}", k / dim)));
        }
        Ok(Self { grid, dim, values, hurst: None, seed: None })
    }

    /// The constant path `w = 0`.
    pub fn zero(grid: TimeGrid, dim: usize) -> Self {
        Self { grid, dim, values: vec![0.0; (grid.steps() + 1) * dim], hurst: None, seed: None }
    }

    /// Builds a path from a function of time.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity((grid.steps() + 1) * dim);
        for k in 0..=grid.steps() {
            let v = f(grid.time(k));
            if v.len() != dim {
                return Err(Error::Contract("path function returned wrong dimension".into()));
            }
            values.extend(v);
        }
        Self::from_values(grid, dim, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hurst(&self) -> Option<f64> {
        self.hurst
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values of coordinate `i` at every node.
    pub fn coordinate(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(i).step_by(self.dim).copied()
    }

    /// Componentwise `(min, max)` over the path.
    pub fn range(&self) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|i| {
                self.coordinate(i)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .collect()
    }
}

/// `E[w_s w_t] = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if s < 0.0 || t < 0.0 {
        return Err(Error::Domain(format!("times must be non-negative, got ({s}, {t})")));
    }
    let h2 = 2.0 * hurst;
    Ok(0.5 * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2)))
}

fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("Hurst parameter must lie in (0, 1), got {hurst}")))
    }
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FbmMethod {
    /// Circulant embedding, falling back to Cholesky when the embedding is not nonnegative.
    Circulant,
    /// Dense Cholesky factorization of the increment covariance.
    Cholesky,
}

/// Samples an `N`-dimensional fBm with independent coordinates.
///
/// Coordinate `i` draws from ChaCha8 stream `i` of `seed`, so the output is a
/// pure function of `(grid, dim, hurst, seed)`.
pub fn generate_fbm(grid: TimeGrid, dim: usize, hurst: f64, seed: u64) -> Result<SamplePath> {
    generate_fbm_with(grid, dim, hurst, seed, FbmMethod::Circulant)
}

pub fn generate_fbm_with(
    grid: TimeGrid,
    dim: usize,
    hurst: f64,
    seed: u64,
    method: FbmMethod,
) -> Result<SamplePath> {
    check_hurst(hurst)?;
    if dim == 0 {
        return Err(Error::Domain("path dimension must be >= 1".into()));
    }
    let m = grid.steps();
    let sampler = match method {
        FbmMethod::Circulant => match CirculantSampler::new(m, hurst) {
            Some(s) => NoiseSampler::Circulant(s),
            None => NoiseSampler::Cholesky(CholeskySampler::new(m, hurst)?),
        },
        FbmMethod::Cholesky => NoiseSampler::Cholesky(CholeskySampler::new(m, hurst)?),
    };
    let scale = grid.dt().powf(hurst);
    let mut values = vec![0.0; (m + 1) * dim];
    for i in 0..dim {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let noise = sampler.sample(&mut rng);
        let mut acc = 0.0;
        for (k, z) in noise.iter().enumerate() {
            acc += scale * z;
            values[(k + 1) * dim + i] = acc;
        }
    }
    Ok(SamplePath { grid, dim, values, hurst: Some(hurst), seed: Some(seed) })
}

enum NoiseSampler {
    Circulant(CirculantSampler),
    Cholesky(CholeskySampler),
}

impl NoiseSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            NoiseSampler::Circulant(s) => s.sample(rng),
            NoiseSampler::Cholesky(s) => s.sample(rng),
        }
    }
}

struct CirculantSampler {
    steps: usize,
    /// `sqrt(lambda_k / 2M)` for the `2M` circulant eigenvalues.
    amplitudes: Vec<f64>,
    fft: Arc<dyn rustfft::Fft<f64>>,
}

impl CirculantSampler {
    fn new(steps: usize, hurst: f64) -> Option<Self> {
        let n = 2 * steps;
        let mut row: Vec<Complex64> = (0..n)
            .map(|j| {
                let lag = if j <= steps { j } else { n - j };
                Complex64::new(fgn_autocovariance(lag, hurst), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        fft.process(&mut row);
        let max = row.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let mut amplitudes = Vec::with_capacity(n);
        for c in &row {
            let lambda = c.re;
            if lambda < -EMBEDDING_TOL * max {
                return None;
            }
            amplitudes.push((lambda.max(0.0) / n as f64).sqrt());
        }
        Some(Self { steps, amplitudes, fft })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self
            .amplitudes
            .iter()
            .map(|&a| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(a * re, a * im)
            })
            .collect();
        self.fft.process(&mut buf);
        buf[..self.steps].iter().map(|c| c.re).collect()
    }
}

struct CholeskySampler {
    steps: usize,
    /// Lower-triangular factor, row-major.
    factor: Vec<f64>,
}

impl CholeskySampler {
    fn new(steps: usize, hurst: f64) -> Result<Self> {
        if steps > CHOLESKY_MAX_STEPS {
            return Err(Error::Generation(format!(
                "circulant embedding unavailable and {steps} steps exceed the Cholesky limit of {CHOLESKY_MAX_STEPS}"
            )));
        }
        let gamma: Vec<f64> = (0..steps).map(|k| fgn_autocovariance(k, hurst)).collect();
        let n = steps;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = gamma[i - j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Generation(format!(
                            "increment covariance is not positive definite (pivot {i}: {s:e})"
                        )));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { steps, factor: l })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.steps;
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        (0..n)
            .map(|i| (0..=i).map(|k| self.factor[i * n + k] * z[k]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub exponent: f64,
    /// Set when every increment vanished; `exponent` is then 1.
    pub degenerate: bool,
    pub lags: Vec<f64>,
    pub sup_increments: Vec<f64>,
}

/// Fits the slope of `log sup_k |w_{k+l} - w_k|` against `log(l dt)` over
/// dyadic lags `l = 1, 2, ..., M/4`.
pub fn estimate_holder_exponent(path: &SamplePath) -> Result<HolderEstimate> {
    let m = path.grid().steps();
    if path.len() < 64 {
        return Err(Error::Domain(format!(
            "Hölder estimation needs at least 64 nodes, got {}",
            path.len()
        )));
    }
    let dt = path.grid().dt();
    let dim = path.dim();
    let mut lags = Vec::new();
    let mut sups = Vec::new();
    let mut lag = 1usize;
    while lag <= m / 4 {
        let mut sup: f64 = 0.0;
        for k in 0..=(m - lag) {
            let a = path.value(k);
            let b = path.value(k + lag);
            let d2: f64 = (0..dim).map(|i| (b[i] - a[i]).powi(2)).sum();
            sup = sup.max(d2);
        }
        lags.push(lag as f64 * dt);
        sups.push(sup.sqrt());
        lag *= 2;
    }
    let scale = sups.iter().cloned().fold(0.0, f64::max);
    if scale == 0.0 || sups.iter().any(|&s| s <= scale * 1e-15) {
        return Ok(HolderEstimate { exponent: 1.0, degenerate: true, lags, sup_increments: sups });
    }
    let x: Vec<f64> = lags.iter().map(|l| l.ln()).collect();
    let y: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
    let (slope, _) = linear_fit(&x, &y).expect("at least four dyadic lags");
    Ok(HolderEstimate {
        exponent: slope.clamp(f64::MIN_POSITIVE, 1.0),
        degenerate: false,
        lags,
        sup_increments: sups,
    })
}
