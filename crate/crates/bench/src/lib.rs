//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use regulab_core::occupation::{local_time_family, strided_subgrid, LocalTimeDensity, ValueGrid};
use regulab_core::paths::{generate_fbm, SamplePath, TimeGrid};
use regulab_core::plaplace::{SolverConfig, SpaceGrid1D};
use regulab_core::potential::{mollified_table, PotentialSpec, PotentialTable};

pub fn path(steps: usize, hurst: f64) -> SamplePath {
    generate_fbm(TimeGrid::unit(steps).unwrap(), 1, hurst, 1).unwrap()
}

pub fn local_time(path: &SamplePath, bins: usize, stride: usize) -> LocalTimeDensity {
    let vg = ValueGrid::covering(path, 0.5, bins).unwrap();
    let idx = strided_subgrid(path.grid().steps(), stride).unwrap();
    local_time_family(path, &idx, &vg, 0.0).unwrap()
}

/// Mollified example potential on the bin width of `lt`.
pub fn example_table(lt: &LocalTimeDensity, eps: f64) -> PotentialTable {
    mollified_table(&PotentialSpec::example1(-1.0, 1.0, eps), 1, lt.grid().width(0), 0.0).unwrap()
}

pub fn solver(p: f64, interior: usize) -> (SolverConfig, Vec<f64>) {
    let space = SpaceGrid1D::new(interior).unwrap();
    let u0 = space.sample(1, |x| vec![(PI * x).sin()]);
    (SolverConfig::new(p, space), u0)
}
