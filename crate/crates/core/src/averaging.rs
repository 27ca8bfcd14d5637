//! The averaging operator `u -> int_s^t b(u - w_r) dr`, computed spatially
//! as the convolution `b * L_{s,t}` of the potential with the local-time
//! increment, and the time-quadrature oracle it has to agree with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{lp_norm, Convolver, GridField, Lattice};
use crate::numeric::{conjugate, CompensatedSum};
use crate::occupation::LocalTimeDensity;
use crate::paths::SamplePath;
use crate::potential::{PotentialTable, VectorField};

/// `(b * L_{s,t})(z)` sampled on a lattice.
#[derive(Debug, Clone)]
pub struct DriftTable {
    field: GridField,
    interval: (f64, f64),
    /// `sup|b| * ||L_{s,t}||_{L^1}`, an upper bound for the table's sup norm.
    bound: f64,
}

impl DriftTable {
    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn eval(&self, u: &[f64], out: &mut [f64]) {
        self.field.interpolate(u, out);
    }
}

/// Convolves a fixed potential table against many local-time increments.
pub struct Averager {
    convolver: Convolver,
    sup_b: f64,
}

impl Averager {
    /// `density_lattice` must share the table spacing.
    pub fn new(table: &GridField, density_lattice: &Lattice) -> Result<Self> {
        Ok(Self { convolver: Convolver::new(table, density_lattice)?, sup_b: table.sup_norm() })
    }

    pub fn for_local_time(table: &PotentialTable, lt: &LocalTimeDensity) -> Result<Self> {
        Self::new(table.field(), lt.grid().lattice())
    }

    pub fn output_lattice(&self) -> &Lattice {
        self.convolver.output_lattice()
    }

    pub fn apply(&self, density: &[f64], interval: (f64, f64)) -> DriftTable {
        let field = self.convolver.apply(density);
        let vol = self.convolver.output_lattice().cell_volume();
        let mass: f64 = density.iter().map(|v| v.abs()).sum::<f64>() * vol;
        DriftTable { field, interval, bound: self.sup_b * mass }
    }

    /// Table for `L_{t_j} - L_{t_i}` at subgrid positions `i <= j`.
    pub fn increment(&self, lt: &LocalTimeDensity, i: usize, j: usize) -> DriftTable {
        self.apply(&lt.increment(i, j), (lt.times()[i], lt.times()[j]))
    }
}

/// One-shot `b * L_{s,t}`.
pub fn convolve_local_time(table: &PotentialTable, increment: &GridField, interval: (f64, f64)) -> Result<DriftTable> {
    if increment.components() != 1 {
        return Err(Error::Contract("local-time increments are scalar".into()));
    }
    Ok(Averager::new(table.field(), increment.lattice())?.apply(increment.data(), interval))
}

/// Left-Riemann quadrature of `int_s^t b(u - w_r) dr` over path nodes.
pub fn averaging_direct(
    b: &dyn VectorField,
    path: &SamplePath,
    s_idx: usize,
    t_idx: usize,
    u: &[f64],
) -> Result<Vec<f64>> {
    if !b.is_continuous() {
        return Err(Error::Contract("direct averaging needs a continuous potential".into()));
    }
    if s_idx > t_idx || t_idx > path.grid().steps() {
        return Err(Error::Contract(format!("invalid interval [{s_idx}, {t_idx}]")));
    }
    let n = b.dim();
    let mut acc = vec![CompensatedSum::new(); n];
    let mut z = vec![0.0; n];
    let mut out = vec![0.0; n];
    for k in s_idx..t_idx {
        let w = path.value(k);
        for i in 0..n {
            z[i] = u[i] - w[i];
        }
        b.eval(&z, &mut out)?;
        for i in 0..n {
            acc[i].add(out[i]);
        }
    }
    let dt = path.grid().dt();
    Ok(acc.iter().map(|a| a.value() * dt).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoungCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Discretization slack allowed on the Young bound.
pub const YOUNG_SLACK: f64 = 0.05;

/// `||f * g||_{C^{0,1}} <= ||f||_{L^rho} ||g||_{W^{1,rho'}}`, with the
/// Lipschitz norm measured as sup plus sup of the discrete gradient.
pub fn young_bound_check(f: &GridField, g: &GridField, rho: f64) -> Result<YoungCheck> {
    if f.components() != 1 || g.components() != 1 {
        return Err(Error::Contract("Young check takes scalar fields".into()));
    }
    if !(rho >= 1.0) {
        return Err(Error::Domain(format!("rho must be at least 1, got {rho}")));
    }
    let conv = Convolver::new(f, g.lattice())?.apply(g.data());
    let lhs = conv.sup_norm() + conv.gradient().sup_norm();
    let rho_c = conjugate(rho);
    let f_norm = lp_norm(f.data(), f.lattice().cell_volume(), rho);
    let rhs = f_norm * (g.lp_norm(rho_c) + g.gradient().lp_norm(rho_c));
    Ok(YoungCheck { lhs, rhs, pass: lhs <= rhs * (1.0 + YOUNG_SLACK) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupation::{local_time_family, strided_subgrid, ValueGrid};
    use crate::paths::TimeGrid;
    use crate::potential::{sample, PotentialKind, PotentialSpec};

    fn line(n: usize, h: f64, o: f64) -> Lattice {
        Lattice::new(vec![o], vec![h], vec![n]).unwrap()
    }

    #[test]
    fn zero_density_gives_zero_table() {
        let spec = PotentialSpec::raw(PotentialKind::Gaussian { amplitude: 1.0, width: 0.3 });
        let table = sample(&spec, &Lattice::symmetric(1, 1.0, 0.01).unwrap()).unwrap();
        let l = GridField::zeros(line(50, 0.01, 0.0), 1);
        let d = convolve_local_time(&table, &l, (0.0, 1.0)).unwrap();
        assert_eq!(d.field().sup_norm(), 0.0);
        assert_eq!(d.bound(), 0.0);
    }

    #[test]
    fn spike_potential_reflects_density() {
        let h = 0.01;
        let lat = Lattice::symmetric(1, 0.05, h).unwrap();
        let mut field = GridField::zeros(lat.clone(), 1);
        let centre = lat.counts()[0] / 2;
        field.data_mut()[centre] = 1.0 / h; // unit mass at +h/2
        let table = PotentialTable::new(field).unwrap();
        let l_lat = line(40, h, 0.3);
        let l = GridField::from_fn(l_lat.clone(), 1, |z, o| {
            o[0] = (7.0 * z[0]).sin().abs();
            Ok(())
        })
        .unwrap();
        let d = convolve_local_time(&table, &l, (0.0, 1.0)).unwrap();
        let mut v = [0.0];
        for k in 0..l_lat.len() {
            let z = l_lat.node(k)[0] + 0.5 * h;
            d.eval(&[z], &mut v);
            assert!((v[0] - l.data()[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn direct_averaging_trivial_cases() {
        let grid = TimeGrid::unit(64).unwrap();
        let path = SamplePath::zero(grid, 1);
        let c = (PotentialSpec::raw(PotentialKind::Constant { value: 2.5 }), 1);
        let v = averaging_direct(&c, &path, 16, 48, &[0.3]).unwrap();
        assert!((v[0] - 2.5 * 0.5).abs() < 1e-14);
        let lin = (PotentialSpec::raw(PotentialKind::Linear { slope: 1.0 }), 1);
        let v = averaging_direct(&lin, &path, 0, 64, &[0.3]).unwrap();
        assert!((v[0] - 0.3).abs() < 1e-14);
        let raw = (PotentialSpec::example1(-1.0, 1.0, 0.0), 1);
        assert!(averaging_direct(&raw, &path, 0, 64, &[0.3]).is_err());
    }

    #[test]
    fn tables_are_additive_in_time() {
        let path = crate::paths::generate_fbm(TimeGrid::unit(1 << 10).unwrap(), 1, 0.3, 5).unwrap();
        let grid = ValueGrid::covering_with_width(&path, 0.1, 0.01).unwrap();
        let lt = local_time_family(&path, &strided_subgrid(1 << 10, 256).unwrap(), &grid, 0.0).unwrap();
        let spec = PotentialSpec::raw(PotentialKind::Gaussian { amplitude: 1.0, width: 0.2 });
        let table = sample(&spec, &Lattice::symmetric(1, 1.0, 0.01).unwrap()).unwrap();
        let avg = Averager::for_local_time(&table, &lt).unwrap();
        let whole = avg.increment(&lt, 0, 4);
        let a = avg.increment(&lt, 0, 1);
        let b = avg.increment(&lt, 1, 4);
        for k in 0..whole.field().data().len() {
            let s = a.field().data()[k] + b.field().data()[k];
            assert!((whole.field().data()[k] - s).abs() <= 1e-12);
        }
        assert!(whole.field().sup_norm() <= whole.bound() * (1.0 + 1e-12));
    }

    #[test]
    fn young_trivial_and_gaussian() {
        let lat = Lattice::symmetric(1, 6.0, 0.01).unwrap();
        let gauss = GridField::from_fn(lat.clone(), 1, |z, o| {
            o[0] = (-0.5 * z[0] * z[0]).exp() / (2.0 * std::f64::consts::PI).sqrt();
            Ok(())
        })
        .unwrap();
        let zero = GridField::zeros(lat, 1);
        let c = young_bound_check(&zero, &gauss, 2.0).unwrap();
        assert!(c.pass && c.lhs == 0.0 && c.rhs == 0.0);
        let c = young_bound_check(&gauss, &gauss, 2.0).unwrap();
        assert!(c.pass && c.lhs < c.rhs, "{c:?}");
    }
}
