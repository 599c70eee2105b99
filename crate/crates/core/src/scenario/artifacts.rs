//! CSV/JSON writers and the loader that turns a run directory back into a
//! trajectory. Floats are printed with 17 significant digits.

use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::{BanicaReport, HamiltonianSeries, ProfileResiduals, VirialSeries};
use crate::error::{LabError, Result};
use crate::evolution::{DiagnosticRow, Snapshot, StopReason, Trajectory};
use crate::grid::{read_snapshot, write_snapshot, GridSpec};

pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const PATH_CSV: &str = "path.csv";
pub const RATE_CSV: &str = "rate_series.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn join(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter().map(fmt).collect::<Vec<_>>().join(",")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| LabError::Parse(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `t,mass,hamiltonian,grad_norm,lambda,center_x[,center_y],loc_mass,residual`.
pub fn write_diagnostics(path: &Path, traj: &Trajectory) -> Result<()> {
    let d = traj.grid.dim();
    let mut w = create(path)?;
    let center = if d == 2 { "center_x,center_y" } else { "center_x" };
    writeln!(w, "t,mass,hamiltonian,grad_norm,lambda,{center},loc_mass,residual")?;
    for r in &traj.diagnostics {
        let mut cols = vec![r.t, r.mass, r.hamiltonian, r.grad_norm, r.lambda, r.center[0]];
        if d == 2 {
            cols.push(r.center[1]);
        }
        cols.extend([r.loc_mass, r.residual]);
        writeln!(w, "{}", join(cols))?;
    }
    w.flush()?;
    Ok(())
}

/// `t,B_1..B_N` at every diagnostic row.
pub fn write_path(path: &Path, traj: &Trajectory) -> Result<()> {
    let Some(values) = &traj.driver_values else { return Ok(()) };
    let modes = values.first().map_or(0, |v| v.len());
    let mut w = create(path)?;
    let names: Vec<String> = (1..=modes).map(|l| format!("B_{l}")).collect();
    writeln!(w, "t,{}", names.join(","))?;
    for (r, b) in traj.diagnostics.iter().zip(values) {
        writeln!(w, "{},{}", fmt(r.t), join(b.iter().copied()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rate_series(path: &Path, t: &[f64], g: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,grad_norm_gauged")?;
    for (a, b) in t.iter().zip(g) {
        writeln!(w, "{},{}", fmt(*a), fmt(*b))?;
    }
    w.flush()?;
    Ok(())
}

pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("snap_{step:07}.dat"))
}

pub fn write_snapshot_file(path: &Path, s: &Snapshot) -> Result<()> {
    let mut w = create(path)?;
    write_snapshot(&mut w, &s.field, s.t)?;
    w.flush()?;
    Ok(())
}

/// The first and last snapshot always; every kept snapshot when `all`.
pub fn write_snapshots(dir: &Path, traj: &Trajectory, all: bool) -> Result<()> {
    fs::create_dir_all(dir.join(SNAPSHOT_DIR))?;
    let n = traj.snapshots.len();
    for (i, s) in traj.snapshots.iter().enumerate() {
        if all || i == 0 || i + 1 == n {
            write_snapshot_file(&snapshot_path(dir, s.step), s)?;
        }
    }
    Ok(())
}

pub fn write_banica(path: &Path, rows: &[(f64, usize, BanicaReport)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,mode,lhs,rhs,satisfied")?;
    for (t, l, r) in rows {
        writeln!(w, "{},{l},{},{},{}", fmt(*t), fmt(r.lhs), fmt(r.rhs), r.satisfied as u8)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_virial(path: &Path, plain: &VirialSeries, cut: &VirialSeries) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,virial,virial_integrated,residual,virial_cut,virial_cut_integrated,residual_cut")?;
    for k in 0..plain.t.len() {
        let cols = [plain.t[k], plain.direct[k], plain.integrated[k], plain.residual[k], cut.direct[k], cut.integrated[k], cut.residual[k]];
        writeln!(w, "{}", join(cols))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_hamiltonian_series(path: &Path, s: &HamiltonianSeries) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,hamiltonian,h1,h2,residual")?;
    for k in 0..s.t.len() {
        writeln!(w, "{}", join([s.t[k], s.hamiltonian[k], s.h1[k], s.h2[k], s.residual[k]]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_profile_residuals(path: &Path, rows: &[(f64, ProfileResiduals)]) -> Result<()> {
    let mut w = create(path)?;
    let k = rows.first().map_or(0, |r| r.1.components.len());
    let mut header = vec!["t".to_string(), "l2".into(), "h1".into(), "sigma".into()];
    for i in 0..k {
        header.push(format!("l2_{i}"));
        header.push(format!("h1_{i}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, r) in rows {
        let mut cols = vec![*t, r.l2, r.h1, r.sigma];
        for c in &r.components {
            cols.extend([c.l2, c.h1]);
        }
        writeln!(w, "{}", join(cols))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_row(line: &str, what: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| LabError::Parse(format!("{what}: '{s}': {e}"))))
        .collect()
}

fn read_table(path: &Path) -> Result<(String, Vec<Vec<f64>>)> {
    let what = path.display().to_string();
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| LabError::Parse(format!("{what}: empty")))??;
    let rows = lines
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| parse_row(&l?, &what))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

/// Rebuilds a trajectory from a run directory: diagnostics, every snapshot
/// file present, the driver dump and the gauged gradient series.
pub fn load_trajectory(dir: &Path, p: f64, stop_reason: StopReason) -> Result<Trajectory> {
    let (header, rows) = read_table(&dir.join(DIAGNOSTICS_CSV))?;
    let two_d = header.contains("center_y");
    let width = if two_d { 9 } else { 8 };
    let diagnostics = rows
        .iter()
        .map(|r| {
            if r.len() != width {
                return Err(LabError::Parse(format!("diagnostics row has {} columns, expected {width}", r.len())));
            }
            let c = if two_d { [r[5], r[6]] } else { [r[5], 0.0] };
            let o = if two_d { 7 } else { 6 };
            Ok(DiagnosticRow {
                t: r[0],
                mass: r[1],
                hamiltonian: r[2],
                grad_norm: r[3],
                lambda: r[4],
                center: c,
                loc_mass: r[o],
                residual: r[o + 1],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if diagnostics.is_empty() {
        return Err(LabError::InsufficientData("diagnostics.csv has no rows".into()));
    }

    let mut files: Vec<(usize, PathBuf)> = fs::read_dir(dir.join(SNAPSHOT_DIR))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let step = name.strip_prefix("snap_")?.strip_suffix(".dat")?.parse().ok()?;
            Some((step, e.path()))
        })
        .collect();
    files.sort();
    let mut snapshots = Vec::with_capacity(files.len());
    let mut grid: Option<GridSpec> = None;
    for (step, path) in files {
        let (field, t) = read_snapshot(BufReader::new(File::open(&path)?))?;
        if grid.is_some_and(|g| g != *field.grid()) {
            return Err(LabError::GridMismatch);
        }
        grid = Some(*field.grid());
        if step >= diagnostics.len() {
            return Err(LabError::Parse(format!("snapshot step {step} beyond the diagnostic series")));
        }
        snapshots.push(Snapshot { t, step, field });
    }
    let grid = grid.ok_or_else(|| LabError::InsufficientData("no snapshot files".into()))?;

    let path_file = dir.join(PATH_CSV);
    let driver_values = if path_file.exists() {
        let (_, rows) = read_table(&path_file)?;
        if rows.len() != diagnostics.len() {
            return Err(LabError::Parse("path.csv and diagnostics.csv differ in length".into()));
        }
        Some(rows.into_iter().map(|r| r[1..].to_vec()).collect())
    } else {
        None
    };
    let rate_file = dir.join(RATE_CSV);
    let gauged_grad_norm = if rate_file.exists() {
        read_table(&rate_file)?.1.into_iter().map(|r| r[1]).collect()
    } else {
        diagnostics.iter().map(|r| r.grad_norm).collect()
    };
    Ok(Trajectory { grid, p, snapshots, diagnostics, driver_values, stop_reason, gauged_grad_norm })
}
