//! Dyadic sewing of two-parameter germs.
//!
//! For a germ `A_{s,t}` with `||delta A||_beta < inf`, `beta > 1`, the dyadic
//! Riemann sums `I^n = sum_i A_{t_i, t_{i+1}}` over `2^n` equal pieces of
//! `[s,t]` form a Cauchy sequence with `||I^n - I^{n+1}|| <=
//! ||delta A||_beta |t-s|^beta 2^{n(1-beta)}`. Germs are evaluated on the
//! integer nodes of a time grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{linear_fit, CompensatedSum};

/// Norm on the germ value space `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueNorm {
    Euclidean,
    /// `sum |v_i| * weight`.
    L1 { weight: f64 },
    /// `(sum |v_i|^2 * weight)^(1/2)`.
    L2 { weight: f64 },
    Sup,
}

impl ValueNorm {
    pub fn norm(&self, v: &[f64]) -> f64 {
        match *self {
            ValueNorm::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            ValueNorm::L1 { weight } => v.iter().map(|x| x.abs()).sum::<f64>() * weight,
            ValueNorm::L2 { weight } => (v.iter().map(|x| x * x).sum::<f64>() * weight).sqrt(),
            ValueNorm::Sup => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// A two-parameter map `(s, t) -> A_{s,t}` on grid nodes, `A_{t,t} = 0`.
pub trait Germ: Sync {
    /// Length of the value vector.
    fn dim(&self) -> usize;
    /// Number of grid steps; nodes are `0..=steps`.
    fn steps(&self) -> usize;
    /// Time of node `k`.
    fn time(&self, k: usize) -> f64;
    fn alpha(&self) -> f64;
    fn beta(&self) -> f64;
    fn norm(&self) -> ValueNorm {
        ValueNorm::Euclidean
    }
    fn eval(&self, s: usize, t: usize, out: &mut [f64]);
}

/// A germ from a closure over node times on a uniform grid of `[0, horizon]`.
pub struct FnGerm<F> {
    dim: usize,
    steps: usize,
    horizon: f64,
    alpha: f64,
    beta: f64,
    norm: ValueNorm,
    f: F,
}

impl<F: Fn(f64, f64, &mut [f64]) + Sync> FnGerm<F> {
    pub fn new(dim: usize, steps: usize, horizon: f64, alpha: f64, beta: f64, f: F) -> Self {
        Self { dim, steps, horizon, alpha, beta, norm: ValueNorm::Euclidean, f }
    }

    pub fn with_norm(mut self, norm: ValueNorm) -> Self {
        self.norm = norm;
        self
    }
}

impl<F: Fn(f64, f64, &mut [f64]) + Sync> Germ for FnGerm<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn steps(&self) -> usize {
        self.steps
    }
    fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn beta(&self) -> f64 {
        self.beta
    }
    fn norm(&self) -> ValueNorm {
        self.norm
    }
    fn eval(&self, s: usize, t: usize, out: &mut [f64]) {
        if s == t {
            out.iter_mut().for_each(|o| *o = 0.0);
        } else {
            (self.f)(self.time(s), self.time(t), out)
        }
    }
}

/// `A - B` for germs on the same grid.
pub struct DifferenceGerm<'a> {
    pub a: &'a dyn Germ,
    pub b: &'a dyn Germ,
}

impl Germ for DifferenceGerm<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn steps(&self) -> usize {
        self.a.steps()
    }
    fn time(&self, k: usize) -> f64 {
        self.a.time(k)
    }
    fn alpha(&self) -> f64 {
        self.a.alpha().min(self.b.alpha())
    }
    fn beta(&self) -> f64 {
        self.a.beta().min(self.b.beta())
    }
    fn norm(&self) -> ValueNorm {
        self.a.norm()
    }
    fn eval(&self, s: usize, t: usize, out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.a.eval(s, t, out);
        self.b.eval(s, t, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, b)| *o -= b);
    }
}

/// `A_{s,t} - A_{s,u} - A_{u,t}`.
pub fn delta(germ: &dyn Germ, s: usize, u: usize, t: usize) -> Result<Vec<f64>> {
    if !(s <= u && u <= t && t <= germ.steps()) {
        return Err(Error::Contract(format!("need s <= u <= t on the grid, got ({s}, {u}, {t})")));
    }
    let d = germ.dim();
    let mut st = vec![0.0; d];
    let mut su = vec![0.0; d];
    let mut ut = vec![0.0; d];
    germ.eval(s, t, &mut st);
    germ.eval(s, u, &mut su);
    germ.eval(u, t, &mut ut);
    Ok((0..d).map(|i| st[i] - su[i] - ut[i]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingResult {
    pub value: Vec<f64>,
    /// Level whose Riemann sum is returned.
    pub level: usize,
    pub converged: bool,
    /// `||I^n - I^{n+1}||` for `n = 0, 1, ...`.
    pub increments: Vec<f64>,
    /// Whether each increment stayed below `||delta A||_beta |t-s|^beta 2^{n(1-beta)}`.
    pub bound_holds: Vec<bool>,
    /// Largest `||delta A_{a,m,b}|| / |b-a|^beta` over the visited dyadic triples.
    pub delta_beta: f64,
    /// Natural-log slope of the increments against the level.
    pub rate: Option<f64>,
    /// `||value - A_{s,t}||`.
    pub remainder: f64,
    /// `remainder / (delta_beta |t-s|^beta)`.
    pub remainder_constant: Option<f64>,
    /// First level from which the increments decrease.
    pub onset: usize,
}

/// Increments below this are rounding noise.
pub const NOISE_FLOOR: f64 = 1e-14;

fn add_into(acc: &mut [CompensatedSum], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, x)| a.add(*x));
}

/// Refines `[s, t]` dyadically until two consecutive sums differ by at most
/// `tol` (returning the coarser one) or `n_max` levels are used.
pub fn dyadic_sewing(germ: &dyn Germ, s: usize, t: usize, n_max: usize, tol: f64) -> Result<SewingResult> {
    let beta = germ.beta();
    if !(beta > 1.0) {
        return Err(Error::Contract(format!("sewing needs beta > 1, got {beta}")));
    }
    if !(s < t && t <= germ.steps()) {
        return Err(Error::Contract(format!("invalid sewing interval [{s}, {t}]")));
    }
    let span = t - s;
    if n_max >= usize::BITS as usize || span % (1usize << n_max) != 0 {
        return Err(Error::Contract(format!("[{s}, {t}] does not span 2^{n_max} grid cells")));
    }
    let d = germ.dim();
    let norm = germ.norm();
    let length = germ.time(t) - germ.time(s);
    let mut whole = vec![0.0; d];
    germ.eval(s, t, &mut whole);
    let mut current = whole.clone();
    let mut increments = Vec::new();
    let mut delta_beta = 0.0f64;
    let mut level = 0;
    let mut converged = false;
    let mut buf_a = vec![0.0; d];
    let mut buf_b = vec![0.0; d];
    while level < n_max {
        let pieces = 1usize << level;
        let width = span >> level;
        let half = width / 2;
        let mut acc = vec![CompensatedSum::new(); d];
        for i in 0..pieces {
            let a = s + i * width;
            let m = a + half;
            let b = a + width;
            germ.eval(a, m, &mut buf_a);
            germ.eval(m, b, &mut buf_b);
            add_into(&mut acc, &buf_a);
            add_into(&mut acc, &buf_b);
            let mut coarse = vec![0.0; d];
            germ.eval(a, b, &mut coarse);
            for j in 0..d {
                coarse[j] -= buf_a[j] + buf_b[j];
            }
            let len = germ.time(b) - germ.time(a);
            delta_beta = delta_beta.max(norm.norm(&coarse) / len.powf(beta));
        }
        let next: Vec<f64> = acc.iter().map(|a| a.value()).collect();
        let diff: Vec<f64> = current.iter().zip(&next).map(|(a, b)| a - b).collect();
        let inc = norm.norm(&diff);
        increments.push(inc);
        if inc <= tol {
            converged = true;
            break;
        }
        current = next;
        level += 1;
    }
    let bound_holds = increments
        .iter()
        .enumerate()
        .map(|(n, &inc)| {
            let bound = delta_beta * length.powf(beta) * 2f64.powf(n as f64 * (1.0 - beta));
            inc <= bound * (1.0 + 1e-9) + NOISE_FLOOR
        })
        .collect();
    let rate = fit_rate(&increments);
    let onset = increments
        .windows(2)
        .position(|w| w[1] < w[0])
        .unwrap_or(increments.len().saturating_sub(1));
    let residual: Vec<f64> = current.iter().zip(&whole).map(|(a, b)| a - b).collect();
    let remainder = norm.norm(&residual);
    let scale = delta_beta * length.powf(beta);
    let remainder_constant = (scale > 0.0).then(|| remainder / scale);
    Ok(SewingResult {
        value: current,
        level,
        converged,
        increments,
        bound_holds,
        delta_beta,
        rate,
        remainder,
        remainder_constant,
        onset,
    })
}

fn fit_rate(increments: &[f64]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = increments
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > NOISE_FLOOR)
        .map(|(n, &v)| (n as f64, v.ln()))
        .unzip();
    linear_fit(&x, &y).map(|(slope, _)| slope)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub slope: Option<f64>,
    /// `(1 - beta) ln 2 + 0.15 ln 2`.
    pub threshold: f64,
    pub degenerate: bool,
    pub pass: bool,
}

pub const RATE_SLACK: f64 = 0.15;

/// Checks that the level increments decay at least like `2^{n(1-beta)}`.
pub fn sewing_rate_certificate(increments: &[f64], beta: f64) -> Result<RateCertificate> {
    if increments.len() < 4 {
        return Err(Error::Contract(format!("need at least 4 levels, got {}", increments.len())));
    }
    let threshold = ((1.0 - beta) + RATE_SLACK) * std::f64::consts::LN_2;
    if increments.iter().all(|&v| v <= NOISE_FLOOR) {
        return Ok(RateCertificate { slope: None, threshold, degenerate: true, pass: true });
    }
    let slope = fit_rate(increments);
    let pass = slope.is_some_and(|s| s <= threshold);
    Ok(RateCertificate { slope, threshold, degenerate: false, pass })
}

/// `sup ||delta A_{a,m,b}|| / |b-a|^beta` over dyadic triples of `[s, t]` down to `depth` levels.
pub fn delta_beta_norm(germ: &dyn Germ, s: usize, t: usize, depth: usize) -> Result<f64> {
    let span = t - s;
    if span % (1usize << depth) != 0 {
        return Err(Error::Contract(format!("[{s}, {t}] does not span 2^{depth} cells")));
    }
    let norm = germ.norm();
    let mut sup = 0.0f64;
    for level in 0..depth {
        let width = span >> level;
        for i in 0..(1usize << level) {
            let a = s + i * width;
            let d = delta(germ, a, a + width / 2, a + width)?;
            let len = germ.time(a + width) - germ.time(a);
            sup = sup.max(norm.norm(&d) / len.powf(germ.beta()));
        }
    }
    Ok(sup)
}

/// `sup ||A_{a,b}|| / |b-a|^alpha` over dyadic intervals of `[s, t]` down to `depth` levels.
pub fn alpha_norm(germ: &dyn Germ, s: usize, t: usize, depth: usize) -> Result<f64> {
    let span = t - s;
    if span % (1usize << depth) != 0 {
        return Err(Error::Contract(format!("[{s}, {t}] does not span 2^{depth} cells")));
    }
    let norm = germ.norm();
    let mut out = vec![0.0; germ.dim()];
    let mut sup = 0.0f64;
    for level in 0..=depth {
        let width = span >> level;
        for i in 0..(1usize << level) {
            let a = s + i * width;
            germ.eval(a, a + width, &mut out);
            let len = germ.time(a + width) - germ.time(a);
            sup = sup.max(norm.norm(&out) / len.powf(germ.alpha()));
        }
    }
    Ok(sup)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConvergence {
    /// `max ||I A_n - I A||` over the dyadic intervals checked, per `n`.
    pub distances: Vec<f64>,
    /// Measured `||A_n - A||_alpha`, per `n`.
    pub alpha_distances: Vec<f64>,
    /// Measured `||delta A_n||_beta`, per `n`.
    pub delta_norms: Vec<f64>,
}

/// Sews `A_n - A` over every dyadic subinterval of `[0, T]` down to
/// `interval_depth` levels and reports the largest distance per `n`.
/// Every `||delta A_n||_beta` (measured to `n_max` levels) must stay below `bound`.
pub fn germ_sequence_convergence(
    sequence: &[&dyn Germ],
    limit: &dyn Germ,
    bound: f64,
    interval_depth: usize,
    n_max: usize,
) -> Result<SequenceConvergence> {
    let steps = limit.steps();
    let mut out = SequenceConvergence { distances: vec![], alpha_distances: vec![], delta_norms: vec![] };
    for (n, germ) in sequence.iter().enumerate() {
        if germ.steps() != steps || germ.dim() != limit.dim() {
            return Err(Error::Contract(format!("germ {n} lives on a different grid")));
        }
        let dn = delta_beta_norm(*germ, 0, steps, n_max)?;
        if dn > bound {
            return Err(Error::Contract(format!(
                "germ {n} violates the uniform bound: ||delta A_n||_beta = {dn} > {bound}"
            )));
        }
        let diff = DifferenceGerm { a: *germ, b: limit };
        let mut worst = 0.0f64;
        for level in 0..=interval_depth {
            let width = steps >> level;
            for i in 0..(1usize << level) {
                let r = dyadic_sewing(&diff, i * width, (i + 1) * width, n_max - level, 0.0)?;
                worst = worst.max(diff.norm().norm(&r.value));
            }
        }
        out.distances.push(worst);
        out.alpha_distances.push(alpha_norm(&diff, 0, steps, n_max)?);
        out.delta_norms.push(dn);
    }
    Ok(out)
}
