use regulab_core::averaging::Averager;
use regulab_core::diagnostics::{
    check_holder_bound, check_strong_estimate, check_weak_estimate, sewing_identity_check, EnergyReport,
};
use regulab_core::occupation::{local_time_family, strided_subgrid, ValueGrid};
use regulab_core::paths::{generate_fbm, TimeGrid};
use regulab_core::plaplace::{solve, ClassicalDrift, RobustifiedDrift, SolverConfig, SpaceGrid1D};
use regulab_core::potential::{mollified_table, sample, PotentialKind, PotentialSpec};
use regulab_core::Lattice;
use std::f64::consts::PI;

#[test]
fn robustified_drift_is_the_sum_over_macro_steps() {
    let steps = 1 << 10;
    let macro_steps = 16;
    let grid = TimeGrid::unit(steps).unwrap();
    let path = generate_fbm(grid, 1, 0.3, 3).unwrap();
    let vg = ValueGrid::covering(&path, 1.0, 512).unwrap();
    let spec = PotentialSpec::raw(PotentialKind::Gaussian { amplitude: 1.0, width: 0.3 });
    let table = sample(&spec, &Lattice::symmetric(1, 2.0, vg.width(0)).unwrap()).unwrap();
    let lt = local_time_family(&path, &strided_subgrid(steps, macro_steps).unwrap(), &vg, 0.0).unwrap();
    let space = SpaceGrid1D::new(32).unwrap();
    let mut cfg = SolverConfig::new(2.0, space);
    cfg.snapshot_stride = macro_steps;
    let u0 = space.sample(1, |x| vec![(PI * x).sin()]);
    let mut drift = RobustifiedDrift::new(&table, &lt, &grid).unwrap();
    let traj = solve(&cfg, &grid, &u0, 1, &mut drift).unwrap();

    let averager = Averager::for_local_time(&table, &lt).unwrap();
    let mut expected = vec![0.0; u0.len()];
    for m in 0..lt.len() - 1 {
        let inc = averager.increment(&lt, m, m + 1);
        let state = traj.state_at(m * macro_steps).unwrap();
        for (e, z) in expected.iter_mut().zip(state) {
            let mut v = [0.0];
            inc.eval(&[*z], &mut v);
            *e += v[0];
        }
    }
    for (a, e) in traj.accumulated_drift.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12 * e.abs().max(1.0), "{a} vs {e}");
    }
}

#[test]
fn constant_potential_control_is_its_square_times_the_horizon() {
    let steps = 1 << 10;
    let grid = TimeGrid::unit(steps).unwrap();
    let path = generate_fbm(grid, 1, 0.3, 5).unwrap();
    let vg = ValueGrid::covering(&path, 2.0, 512).unwrap();
    let spec = PotentialSpec::raw(PotentialKind::Constant { value: 0.5 });
    let table = sample(&spec, &Lattice::symmetric(1, 8.0, vg.width(0)).unwrap()).unwrap();
    let space = SpaceGrid1D::new(32).unwrap();
    let cfg = SolverConfig::new(2.0, space);
    let u0 = space.sample(1, |x| vec![0.1 * (PI * x).sin()]);
    let mut drift = ClassicalDrift::new(&table, &path).unwrap();
    let traj = solve(&cfg, &grid, &u0, 1, &mut drift).unwrap();
    let lt = local_time_family(&path, &strided_subgrid(steps, 16).unwrap(), &vg, 0.0).unwrap();
    let id = sewing_identity_check(&traj, &table.squared_magnitude(), &lt).unwrap();
    let expected = 0.25 * space.interior() as f64 * space.dx();
    assert!((id.direct - expected).abs() < 1e-9, "{}", id.direct);
    assert!(id.residual < 0.05, "{id:?}");
}

#[test]
fn mollified_example1_run_satisfies_the_energy_estimates() {
    let steps = 1 << 12;
    let grid = TimeGrid::unit(steps).unwrap();
    let path = generate_fbm(grid, 1, 0.1, 21).unwrap();
    let table = mollified_table(&PotentialSpec::example1(-1.0, 1.0, 0.05), 1, 0.0125, 0.0).unwrap();
    let space = SpaceGrid1D::new(32).unwrap();
    for p in [2.0, 3.0] {
        let cfg = SolverConfig::new(p, space);
        let u0 = space.sample(1, |x| vec![(PI * x).sin()]);
        let mut drift = ClassicalDrift::new(&table, &path).unwrap();
        let traj = solve(&cfg, &grid, &u0, 1, &mut drift).unwrap();
        let report = EnergyReport::from_trajectory(&traj).unwrap();
        assert!(check_strong_estimate(&report).pass);
        assert!(check_weak_estimate(&report).pass);
        assert!(check_holder_bound(&report).pass);
    }
}
