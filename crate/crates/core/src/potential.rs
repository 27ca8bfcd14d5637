//! Drift potentials `b: R^N -> R^N`, their Gaussian mollifications and
//! structural checks.
//!
//! The model potential is `b(u) = -|u|^(eta-1) u 1{|u| <= K}`, singular at the
//! origin for `eta < 1`. Mollified versions are delivered as sampled tables
//! on lattices with nodes at odd multiples of `h/2`, which keeps the odd
//! symmetry exact and avoids sampling the singularity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{gaussian_smooth, GridField, Lattice};

/// Pointwise vector field `R^N -> R^N`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<()>;
    /// Whether pointwise evaluation is continuous everywhere.
    fn is_continuous(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialKind {
    /// `-|u|^(eta-1) u` inside the ball of radius `K`.
    Example1 {
        eta: f64,
        #[serde(rename = "K")]
        cutoff: f64,
    },
    /// `amplitude * exp(-|u|^2 / (2 width^2))` in every component.
    Gaussian { amplitude: f64, width: f64 },
    /// `slope * u`.
    Linear { slope: f64 },
    /// The constant `value` in every component.
    Constant { value: f64 },
    Zero {},
    /// Samples on a regular lattice, `dim` values per node, node-major.
    CustomTable {
        origin: Vec<f64>,
        spacing: Vec<f64>,
        counts: Vec<usize>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(flatten)]
    pub kind: PotentialKind,
    /// Mollification width; zero means the raw potential.
    #[serde(default)]
    pub eps: f64,
}

impl PotentialSpec {
    pub fn example1(eta: f64, cutoff: f64, eps: f64) -> Self {
        Self { kind: PotentialKind::Example1 { eta, cutoff }, eps }
    }

    pub fn raw(kind: PotentialKind) -> Self {
        Self { kind, eps: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Domain(format!("eps must be non-negative, got {}", self.eps)));
        }
        match &self.kind {
            PotentialKind::Example1 { eta, cutoff } => {
                if !(cutoff.is_finite() && *cutoff > 0.0) {
                    return Err(Error::Domain(format!("cutoff must be positive, got {cutoff}")));
                }
                if !(eta.is_finite() && *eta < 1.0) {
                    return Err(Error::Domain(format!("eta must be finite and < 1, got {eta}")));
                }
            }
            PotentialKind::Gaussian { width, .. } if !(*width > 0.0) => {
                return Err(Error::Domain(format!("width must be positive, got {width}")));
            }
            PotentialKind::CustomTable { origin, spacing, counts, values } => {
                let lattice = Lattice::new(origin.clone(), spacing.clone(), counts.clone())?;
                if values.len() != lattice.len() * lattice.dim() {
                    return Err(Error::Contract("custom table size mismatch".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Radius outside of which the raw potential vanishes, if any.
    pub fn support_radius(&self) -> Option<f64> {
        match &self.kind {
            PotentialKind::Example1 { cutoff, .. } => Some(*cutoff),
            PotentialKind::Zero {} => Some(0.0),
            PotentialKind::CustomTable { origin, spacing, counts, .. } => {
                let r = (0..origin.len())
                    .map(|a| {
                        let hi = origin[a] + (counts[a] - 1) as f64 * spacing[a];
                        origin[a].abs().max(hi.abs())
                    })
                    .fold(0.0, f64::max);
                Some(r * (origin.len() as f64).sqrt())
            }
            _ => None,
        }
    }
}

/// Raw evaluation of a potential (mollification ignored).
pub fn eval_b(spec: &PotentialSpec, u: &[f64], out: &mut [f64]) -> Result<()> {
    match &spec.kind {
        PotentialKind::Example1 { eta, cutoff } => {
            let r = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if r == 0.0 {
                return Err(Error::Singular(u.to_vec()));
            }
            let scale = if r <= *cutoff { -r.powf(eta - 1.0) } else { 0.0 };
            out.iter_mut().zip(u).for_each(|(o, x)| *o = scale * x);
        }
        PotentialKind::Gaussian { amplitude, width } => {
            let r2 = u.iter().map(|x| x * x).sum::<f64>();
            let v = amplitude * (-0.5 * r2 / (width * width)).exp();
            out.iter_mut().for_each(|o| *o = v);
        }
        PotentialKind::Linear { slope } => {
            out.iter_mut().zip(u).for_each(|(o, x)| *o = slope * x);
        }
        PotentialKind::Constant { value } => out.iter_mut().for_each(|o| *o = *value),
        PotentialKind::Zero {} => out.iter_mut().for_each(|o| *o = 0.0),
        PotentialKind::CustomTable { origin, spacing, counts, values } => {
            let lattice = Lattice::new(origin.clone(), spacing.clone(), counts.clone())?;
            let dim = lattice.dim();
            GridField::from_data(lattice, dim, values.clone())?.interpolate(u, out);
        }
    }
    Ok(())
}

impl VectorField for (PotentialSpec, usize) {
    fn dim(&self) -> usize {
        self.1
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        eval_b(&self.0, z, out)
    }

    fn is_continuous(&self) -> bool {
        match &self.0.kind {
            PotentialKind::Example1 { .. } | PotentialKind::CustomTable { .. } => false,
            _ => true,
        }
    }
}

/// A potential sampled on a lattice; evaluation interpolates multilinearly
/// and vanishes outside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTable {
    field: GridField,
}

impl PotentialTable {
    pub fn new(field: GridField) -> Result<Self> {
        if field.components() != field.lattice().dim() {
            return Err(Error::Contract("potential tables map R^N to R^N".into()));
        }
        Ok(Self { field })
    }

    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn lattice(&self) -> &Lattice {
        self.field.lattice()
    }

    /// Pointwise `|b|^2` as a scalar table on the same lattice.
    pub fn squared_magnitude(&self) -> GridField {
        let m: Vec<f64> = self.field.magnitude().into_iter().map(|v| v * v).collect();
        GridField::from_data(self.field.lattice().clone(), 1, m).expect("same lattice")
    }

    pub fn sup_norm(&self) -> f64 {
        self.field.sup_norm()
    }
}

impl VectorField for PotentialTable {
    fn dim(&self) -> usize {
        self.field.components()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.field.interpolate(z, out);
        Ok(())
    }

    fn is_continuous(&self) -> bool {
        true
    }
}

/// Samples the raw potential at every node of `lattice`.
pub fn sample(spec: &PotentialSpec, lattice: &Lattice) -> Result<PotentialTable> {
    spec.validate()?;
    let dim = lattice.dim();
    PotentialTable::new(GridField::from_fn(lattice.clone(), dim, |z, out| eval_b(spec, z, out))?)
}

/// `b_eps = b * rho_eps` on `lattice`, with `rho_eps` the discrete Gaussian
/// of standard deviation `eps` truncated at `4 eps` and renormalized.
/// Requires lattice spacing `<= eps / 4`. With `eps = 0` the raw potential
/// is sampled.
pub fn mollify(spec: &PotentialSpec, eps: f64, lattice: &Lattice) -> Result<PotentialTable> {
    spec.validate()?;
    if eps == 0.0 {
        return sample(spec, lattice);
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    if let Some(h) = lattice.spacing().iter().copied().find(|&h| h > eps / 4.0 * (1.0 + 1e-12)) {
        return Err(Error::Contract(format!("grid spacing {h} is coarser than eps/4 = {}", eps / 4.0)));
    }
    let dim = lattice.dim();
    let reach: Vec<usize> = lattice.spacing().iter().map(|h| (4.0 * eps / h).floor() as usize).collect();
    let origin = (0..dim).map(|a| lattice.origin()[a] - reach[a] as f64 * lattice.spacing()[a]).collect();
    let counts = (0..dim).map(|a| lattice.counts()[a] + 2 * reach[a]).collect();
    let wide = Lattice::new(origin, lattice.spacing().to_vec(), counts)?;
    let raw = sample(spec, &wide)?;
    let smooth = gaussian_smooth(raw.field(), eps);
    let mut out = GridField::zeros(lattice.clone(), dim);
    for k in 0..lattice.len() {
        let idx = lattice.multi_index(k);
        let shifted: Vec<usize> = idx.iter().zip(&reach).map(|(i, r)| i + r).collect();
        let src = wide.flat_index(&shifted);
        out.data_mut()[k * dim..(k + 1) * dim].copy_from_slice(smooth.value(src));
    }
    PotentialTable::new(out)
}

/// Like [`mollify`], but a lattice coarser than `eps / 4` is refined by an
/// odd integer factor per axis (so a node-free origin stays node-free),
/// mollified there, and read back at its own nodes.
pub fn mollify_resampled(spec: &PotentialSpec, eps: f64, lattice: &Lattice) -> Result<PotentialTable> {
    if eps <= 0.0 || !eps.is_finite() {
        return mollify(spec, eps, lattice);
    }
    let factors: Vec<usize> = lattice.spacing().iter().map(|h| (4.0 * h / eps * (1.0 - 1e-12)).ceil().max(1.0) as usize | 1).collect();
    if factors.iter().all(|&m| m == 1) {
        return mollify(spec, eps, lattice);
    }
    let dim = lattice.dim();
    let spacing = lattice.spacing().iter().zip(&factors).map(|(h, &m)| h / m as f64).collect();
    let counts = lattice.counts().iter().zip(&factors).map(|(n, &m)| (n - 1) * m + 1).collect();
    let fine = Lattice::new(lattice.origin().to_vec(), spacing, counts)?;
    let table = mollify(spec, eps, &fine)?;
    let mut out = GridField::zeros(lattice.clone(), dim);
    for k in 0..lattice.len() {
        let idx: Vec<usize> = lattice.multi_index(k).iter().zip(&factors).map(|(i, m)| i * m).collect();
        out.data_mut()[k * dim..(k + 1) * dim].copy_from_slice(table.field().value(fine.flat_index(&idx)));
    }
    PotentialTable::new(out)
}

/// Mollified table on the symmetric lattice `[-R, R]^N` of spacing `h`,
/// with `R` the support radius plus `4 eps` (or `fallback_radius` when the
/// potential has unbounded support). Any spacing is accepted.
pub fn mollified_table(
    spec: &PotentialSpec,
    dim: usize,
    h: f64,
    fallback_radius: f64,
) -> Result<PotentialTable> {
    let radius = spec.support_radius().unwrap_or(fallback_radius) + 4.0 * spec.eps + 2.0 * h;
    mollify_resampled(spec, spec.eps, &Lattice::symmetric(dim, radius, h)?)
}

/// `(sum |b|^(2q) h^N)^(1/(2q))`.
pub fn l2q_norm(field: &GridField, q: f64) -> Result<f64> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(Error::Domain(format!("q must lie in [1, inf), got {q}")));
    }
    Ok(field.lp_norm(2.0 * q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub violations: usize,
    /// Largest `(b(u) - b(v)) . (u - v)` seen.
    pub worst: f64,
    pub pass: bool,
}

pub const MONOTONICITY_TOL: f64 = 1e-12;

/// Checks `(b(u) - b(v)) . (u - v) <= 1e-12` on the given pairs.
pub fn monotonicity_check(b: &dyn VectorField, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<MonotonicityReport> {
    let n = b.dim();
    let mut bu = vec![0.0; n];
    let mut bv = vec![0.0; n];
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for (u, v) in pairs {
        b.eval(u, &mut bu)?;
        b.eval(v, &mut bv)?;
        let s: f64 = (0..n).map(|i| (bu[i] - bv[i]) * (u[i] - v[i])).sum();
        worst = worst.max(s);
        if s > MONOTONICITY_TOL {
            violations += 1;
        }
    }
    Ok(MonotonicityReport { pairs: pairs.len(), violations, worst, pass: violations == 0 })
}

/// Uniform random pairs in `[-radius, radius]^dim`.
pub fn random_pairs(dim: usize, radius: f64, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-radius..=radius)).collect()
    };
    (0..count).map(|_| (draw(&mut rng), draw(&mut rng))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ex1(eta: f64) -> PotentialSpec {
        PotentialSpec::example1(eta, 1.0, 0.0)
    }

    #[test]
    fn example1_closed_forms() {
        let mut out = [0.0];
        eval_b(&ex1(-1.0), &[0.5], &mut out).unwrap();
        assert_relative_eq!(out[0], -2.0, epsilon = 1e-14);
        eval_b(&ex1(-0.4), &[-2.0], &mut out).unwrap();
        assert_eq!(out[0], 0.0);
        let mut out3 = [0.0; 3];
        eval_b(&ex1(-1.0), &[0.3, 0.0, 0.0], &mut out3).unwrap();
        assert_relative_eq!(out3[0], -0.3 / 0.09, epsilon = 1e-12);
        assert_eq!(&out3[1..], &[0.0, 0.0]);
        assert!(matches!(eval_b(&ex1(-1.0), &[0.0], &mut out), Err(Error::Singular(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec: PotentialSpec =
            serde_json::from_str(r#"{"kind":"example1","eta":-1.0,"K":1.0,"eps":0.01}"#).unwrap();
        assert_eq!(spec, PotentialSpec::example1(-1.0, 1.0, 0.01));
        assert!(serde_json::from_str::<PotentialSpec>(r#"{"kind":"example1","eta":-1.0}"#).is_err());
        let zero: PotentialSpec = serde_json::from_str(r#"{"kind":"zero"}"#).unwrap();
        assert_eq!(zero.eps, 0.0);
    }

    #[test]
    fn mollification_rejects_coarse_grid() {
        let lat = Lattice::symmetric(1, 1.0, 0.02).unwrap();
        assert!(matches!(mollify(&ex1(-1.0), 0.05, &lat), Err(Error::Contract(_))));
    }

    #[test]
    fn mollified_example1_is_odd_and_vanishes_at_origin() {
        let spec = PotentialSpec::example1(-1.0, 1.0, 0.05);
        let table = mollified_table(&spec, 1, 0.01, 0.0).unwrap();
        let mut a = [0.0];
        let mut b = [0.0];
        table.eval(&[0.0], &mut a).unwrap();
        assert!(a[0].abs() < 1e-12);
        for &z in &[0.013, 0.1, 0.37, 0.9, 1.05] {
            table.eval(&[z], &mut a).unwrap();
            table.eval(&[-z], &mut b).unwrap();
            assert!((a[0] + b[0]).abs() < 1e-12 * a[0].abs().max(1.0));
        }
    }

    #[test]
    fn smooth_mollification_is_first_order_consistent() {
        let spec = PotentialSpec::raw(PotentialKind::Gaussian { amplitude: 1.0, width: 0.5 });
        let mut errs = Vec::new();
        for &eps in &[0.08, 0.04, 0.02] {
            let lat = Lattice::symmetric(1, 2.0, eps / 8.0).unwrap();
            let table = mollify(&spec, eps, &lat).unwrap();
            let exact = sample(&spec, &lat).unwrap();
            let mut d = table.field().clone();
            d.add_scaled(exact.field(), -1.0);
            errs.push(d.sup_norm());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-2);
    }

    #[test]
    fn l2q_examples() {
        let lat = Lattice::symmetric(1, 2.0, 1e-3).unwrap();
        let indicator = GridField::from_fn(lat.clone(), 1, |z, o| {
            o[0] = if z[0].abs() <= 1.0 { 1.0 } else { 0.0 };
            Ok(())
        })
        .unwrap();
        assert_relative_eq!(l2q_norm(&indicator, 1.0).unwrap(), 2f64.sqrt(), epsilon = 1e-3);
        assert_eq!(l2q_norm(&GridField::zeros(lat, 1), 1.0).unwrap(), 0.0);
        let fine = Lattice::symmetric(1, 1.5, 1e-5).unwrap();
        let t = sample(&ex1(-0.25), &fine).unwrap();
        assert!((l2q_norm(t.field(), 1.0).unwrap() - 2.0).abs() < 1e-2);
    }

    #[test]
    fn monotonicity_examples() {
        let pairs = random_pairs(1, 2.0, 10_000, 1);
        let decreasing = (PotentialSpec::raw(PotentialKind::Linear { slope: -1.0 }), 1);
        assert!(monotonicity_check(&decreasing, &pairs).unwrap().pass);
        let increasing = (PotentialSpec::raw(PotentialKind::Linear { slope: 1.0 }), 1);
        assert!(!monotonicity_check(&increasing, &pairs).unwrap().pass);
    }

    #[test]
    fn resampled_mollification_agrees_with_the_fine_table() {
        let spec = PotentialSpec::example1(-1.0, 1.0, 0.05);
        let coarse = mollified_table(&spec, 1, 0.03, 0.0).unwrap();
        let fine = mollified_table(&spec, 1, 0.01, 0.0).unwrap();
        let mut a = [0.0];
        let mut b = [0.0];
        for k in 0..coarse.lattice().len() {
            let z = coarse.lattice().node(k);
            coarse.eval(&z, &mut a).unwrap();
            fine.eval(&z, &mut b).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-9 * b[0].abs().max(1.0), "{z:?}: {} vs {}", a[0], b[0]);
        }
    }

    #[test]
    fn example1_fails_monotonicity_except_across_the_origin() {
        for eps in [0.0, 0.05] {
            let spec = PotentialSpec::example1(-1.0, 1.0, eps);
            let table = mollified_table(&spec, 1, 0.01, 0.0).unwrap();
            let generic = monotonicity_check(&table, &random_pairs(1, 2.0, 2000, 4)).unwrap();
            assert!(!generic.pass && generic.worst > 0.0);
            let straddling: Vec<_> = (1..50)
                .map(|i| (vec![0.1 + 0.01 * i as f64], vec![-0.1 - 0.013 * i as f64]))
                .collect();
            assert!(monotonicity_check(&table, &straddling).unwrap().pass);
        }
    }
}
