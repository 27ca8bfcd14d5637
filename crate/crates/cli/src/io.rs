//! CSV and JSON files. Floats are written with 17 significant digits so
//! every value reads back bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use regulab_core::diagnostics::EnergyReport;
use regulab_core::occupation::{LocalTimeDensity, ValueGrid};
use regulab_core::paths::TimeGrid;
use regulab_core::plaplace::StateTrajectory;
use regulab_core::SamplePath;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Collects every file written so the manifest can checksum them.
#[derive(Debug, Default)]
pub struct OutputSet {
    pub files: Vec<PathBuf>,
}

impl OutputSet {
    pub fn record(&mut self, path: &Path) {
        self.files.push(path.to_path_buf());
    }
}

pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| CliError::input(path, e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(path, e.to_string()))?;
    text.push('\n');
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(path, e.to_string()))
}

/// A CSV table; cells are parsed as numbers on access.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e.to_string()))?;
        let headers: Vec<String> = r
            .headers()
            .map_err(|e| CliError::input(path, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
            rows.push(rec.iter().map(|v| v.trim().to_string()).collect());
        }
        Ok(Self { path: path.to_path_buf(), headers, rows })
    }

    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(&self.path, format!("missing column `{name}`")))
    }

    pub fn column(&self, name: &str) -> CliResult<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row[i].parse::<f64>().map_err(|e| CliError::input(&self.path, format!("row {}, `{name}`: {e}", r + 1)))
            })
            .collect()
    }

    /// All columns parsed, row-major.
    pub fn numeric_rows(&self) -> CliResult<Vec<Vec<f64>>> {
        let cols = self.headers.iter().map(|h| self.column(h)).collect::<CliResult<Vec<_>>>()?;
        Ok((0..self.rows.len()).map(|r| cols.iter().map(|c| c[r]).collect()).collect())
    }
}

pub fn path_header(dim: usize) -> Vec<String> {
    std::iter::once("t".to_string()).chain((1..=dim).map(|i| format!("w_{i}"))).collect()
}

pub fn write_path(file: &Path, path: &SamplePath) -> CliResult<()> {
    let grid = path.grid();
    write_csv(
        file,
        &path_header(path.dim()),
        (0..=grid.steps()).map(|k| {
            std::iter::once(fmt(grid.time(k))).chain(path.value(k).iter().map(|&v| fmt(v))).collect()
        }),
    )
}

pub fn read_path(file: &Path) -> CliResult<SamplePath> {
    let table = Table::read(file)?;
    let rows = table.numeric_rows()?;
    if table.headers.first().map(String::as_str) != Some("t") || table.headers.len() < 2 {
        return Err(CliError::input(file, "expected columns t, w_1, ..., w_N"));
    }
    let dim = table.headers.len() - 1;
    if rows.len() < 2 {
        return Err(CliError::input(file, "a path needs at least two nodes"));
    }
    let steps = rows.len() - 1;
    let horizon = rows[steps][0];
    let grid = TimeGrid::new(horizon, steps).map_err(|e| CliError::input(file, e.to_string()))?;
    let values = rows.iter().flat_map(|r| r[1..].to_vec()).collect();
    SamplePath::from_values(grid, dim, values).map_err(|e| CliError::input(file, e.to_string()))
}

/// Sidecar of a local-time CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalTimeSidecar {
    pub bounds: Vec<(f64, f64)>,
    pub bins: usize,
    pub bandwidth: f64,
    pub horizon: f64,
    pub steps: usize,
    /// `t_idx -> t`.
    pub times: BTreeMap<usize, f64>,
    /// `|sum L_t h^N - t|` per written node.
    pub mass_residuals: BTreeMap<usize, f64>,
    pub max_mass_residual: f64,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `t_idx, bin_idx_1..bin_idx_N, L` rows (non-zero entries only) for
/// the subgrid positions in `which`, plus the JSON sidecar.
pub fn write_local_time(file: &Path, lt: &LocalTimeDensity, which: &[usize], grid: &TimeGrid) -> CliResult<PathBuf> {
    let vg = lt.grid();
    let dim = vg.dim();
    let mut header = vec!["t_idx".to_string()];
    header.extend((1..=dim).map(|a| format!("bin_idx_{a}")));
    header.push("L".into());
    let lattice = vg.lattice();
    let mut rows = Vec::new();
    let mut times = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    for &i in which {
        let k = lt.time_indices()[i];
        times.insert(k, lt.times()[i]);
        residuals.insert(k, (lt.mass(i) - lt.times()[i]).abs());
        for (bin, &l) in lt.density(i).iter().enumerate() {
            if l != 0.0 {
                let mut row = vec![k.to_string()];
                row.extend(lattice.multi_index(bin).iter().map(|b| b.to_string()));
                row.push(fmt(l));
                rows.push(row);
            }
        }
    }
    write_csv(file, &header, rows)?;
    let sidecar = LocalTimeSidecar {
        bounds: vg.bounds().to_vec(),
        bins: vg.bins(),
        bandwidth: lt.bandwidth(),
        horizon: grid.horizon(),
        steps: grid.steps(),
        max_mass_residual: residuals.values().copied().fold(0.0, f64::max),
        times,
        mass_residuals: residuals,
    };
    let side = sidecar_path(file);
    write_json(&side, &sidecar)?;
    Ok(side)
}

/// Local-time densities read back from CSV: the value grid and one dense
/// density per time index.
pub struct LocalTimeTable {
    pub grid: ValueGrid,
    pub sidecar: LocalTimeSidecar,
    pub densities: BTreeMap<usize, Vec<f64>>,
}

pub fn read_local_time(file: &Path) -> CliResult<LocalTimeTable> {
    let sidecar: LocalTimeSidecar = read_json(&sidecar_path(file))?;
    let grid = ValueGrid::new(sidecar.bounds.clone(), sidecar.bins).map_err(|e| CliError::input(file, e.to_string()))?;
    let table = Table::read(file)?;
    let dim = grid.dim();
    if table.headers.len() != dim + 2 {
        return Err(CliError::input(file, "column count does not match the sidecar dimension"));
    }
    let mut densities: BTreeMap<usize, Vec<f64>> =
        sidecar.times.keys().map(|&k| (k, vec![0.0; grid.total_bins()])).collect();
    for row in &table.numeric_rows()? {
        let k = row[0] as usize;
        let idx: Vec<usize> = row[1..=dim].iter().map(|&b| b as usize).collect();
        if idx.iter().any(|&b| b >= grid.bins()) {
            return Err(CliError::input(file, format!("bin index {idx:?} outside the grid")));
        }
        let d = densities
            .get_mut(&k)
            .ok_or_else(|| CliError::input(file, format!("time index {k} not in the sidecar")))?;
        d[grid.lattice().flat_index(&idx)] = row[dim + 1];
    }
    Ok(LocalTimeTable { grid, sidecar, densities })
}

/// `k, t, j, x, u_1..u_N` at every stored snapshot, boundary nodes included.
pub fn write_trajectory(file: &Path, traj: &StateTrajectory) -> CliResult<()> {
    let dim = traj.dim;
    let mut header: Vec<String> = ["k", "t", "j", "x"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=dim).map(|i| format!("u_{i}")));
    let space = traj.space;
    let dx = space.dx();
    let mut rows = Vec::new();
    for (&k, state) in traj.snapshot_steps.iter().zip(&traj.snapshots) {
        let full = space.with_boundary(state, dim);
        for (j, node) in full.chunks(dim).enumerate() {
            let mut row = vec![k.to_string(), fmt(traj.grid.time(k)), j.to_string(), fmt(j as f64 * dx)];
            row.extend(node.iter().map(|&v| fmt(v)));
            rows.push(row);
        }
    }
    write_csv(file, &header, rows)
}

pub fn energy_header() -> Vec<String> {
    ["k", "t", "l2", "grad_lp", "sup", "cum_dt_sq", "cum_div_sq", "cum_drift_sq", "cum_grad_p"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Energy series at the snapshot steps of `traj`.
pub fn write_energy(file: &Path, report: &EnergyReport, traj: &StateTrajectory) -> CliResult<()> {
    write_csv(
        file,
        &energy_header(),
        traj.snapshot_steps.iter().map(|&k| {
            vec![
                k.to_string(),
                fmt(report.times[k]),
                fmt(report.l2[k]),
                fmt(report.grad_lp[k]),
                fmt(report.sup[k]),
                fmt(report.cum_dt_sq[k]),
                fmt(report.cum_div_sq[k]),
                fmt(report.cum_drift_sq[k]),
                fmt(report.cum_grad_p[k]),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use regulab_core::paths::generate_fbm;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn path_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("w.csv");
        let path = generate_fbm(TimeGrid::new(2.0, 64).unwrap(), 2, 0.3, 9).unwrap();
        write_path(&file, &path).unwrap();
        let back = read_path(&file).unwrap();
        assert_eq!(back.values(), path.values());
        assert_eq!(back.grid(), path.grid());
    }
}
