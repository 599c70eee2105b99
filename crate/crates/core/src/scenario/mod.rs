//! Config-driven scenarios: build initial data, integrate, run the diagnostic
//! battery and write artifacts. Ensembles run members in parallel and write
//! each member to its own directory.

pub mod artifacts;
pub mod config;

use rayon::prelude::*;
use serde::Serialize;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::diagnostics::{
    banica_check, blowup_rate_fit, hamiltonian_evolution_residual, last_decade, localized_mass, modulation_fit,
    profile_residuals, virial_evolution_residual, BanicaReport, CutoffSpec, HamiltonianSeries, ModulationFit,
    ProfileResiduals, RateFit, RateLaw, VirialSeries,
};
use crate::error::{LabError, Result};
use crate::evolution::{backward_solve, evolve_fixed, integrate, EvolveConfig, NoiseSetup, Reference, StopReason, Trajectory};
use crate::exact::{pseudo_conformal_map, BlowupParams, MapDirection, ProfileParams, SolitonParams};
use crate::grid::{read_snapshot, ComplexField, GridSpec, Spectral};
use crate::ground_state::QProfile;
use crate::noise::{BrownianPath, Driver, NoiseProfile, NoiseProfileSet, ProfileKind};
use crate::Complex64;

pub use config::{ScenarioConfig, ScenarioKind};

/// Environment variable naming the directory that relative outputs live under.
pub const OUTPUT_ROOT_ENV: &str = "NLSIM_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit status for a failed run.
pub fn exit_code(err: &LabError) -> i32 {
    match err {
        LabError::Config(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// `<root>/<config.output or kind>`, where root is the given override, else
/// the environment variable, else the working directory.
pub fn output_dir(config: &ScenarioConfig, root: Option<&Path>) -> PathBuf {
    let root = root
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    root.join(config.output.clone().unwrap_or_else(|| config.kind.as_str().to_string()))
}

/// Everything a run needs, built before any file is written.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub grid: GridSpec,
    pub q: QProfile,
    pub evolve: EvolveConfig,
    pub reference: Option<ProfileParams>,
    /// Regular part `z(t0)` carried alongside the profiles.
    pub regular: Option<ComplexField>,
    /// Profiles `φ` used for the Banica check.
    pub banica_profiles: NoiseProfileSet,
}

fn as_config(e: LabError) -> LabError {
    match e {
        LabError::Config(_) => e,
        other => LabError::Config(other.to_string()),
    }
}

fn gaussian(grid: &GridSpec, center: [f64; 2], width: f64, momentum: [f64; 2]) -> ComplexField {
    let d = grid.dim();
    ComplexField::from_fn(grid, |x| {
        let (mut r2, mut ph) = (0.0, 0.0);
        for a in 0..d {
            r2 += (x[a] - center[a]).powi(2);
            ph += momentum[a] * x[a];
        }
        Complex64::from_polar((-r2 / (width * width)).exp(), ph)
    })
}

fn h1_norm(f: &ComplexField) -> f64 {
    let mut sp = Spectral::new(f.grid());
    (f.norm_sq() + sp.grad_norm_sq(f.values())).sqrt()
}

/// `z*`: a Gaussian scaled to the configured fraction of `||Q||_{H^1}`.
fn regular_profile(cfg: &ScenarioConfig, grid: &GridSpec, q: &QProfile) -> Result<ComplexField> {
    let g = gaussian(grid, cfg.z_center()?, cfg.profile.z_width.unwrap_or(1.0), [0.0; 2]);
    let scale = cfg.z_amplitude() * q.h1_norm() / h1_norm(&g);
    Ok(g.scale(Complex64::new(scale, 0.0)))
}

fn noise_setup(cfg: &ScenarioConfig, grid: &GridSpec, t0: f64, t1: f64) -> Result<Option<NoiseSetup>> {
    let n = &cfg.noise;
    let kind = match n.kind {
        config::NoiseKindConfig::None => return Ok(None),
        config::NoiseKindConfig::Constant => ProfileKind::Constant,
        config::NoiseKindConfig::Schwartz => ProfileKind::Schwartz { sigma: n.sigma },
        config::NoiseKindConfig::Flat => ProfileKind::Flat,
    };
    let flat_points = if n.flat_points.is_empty() { cfg.bubbles().iter().map(|b| b.x).collect() } else { n.flat_points.clone() };
    let profiles = (0..n.modes)
        .map(|l| NoiseProfile {
            kind: kind.clone(),
            amplitude: n.amplitude,
            dim: grid.dim(),
            center: n.centers.get(l).copied().unwrap_or([0.0; 2]),
            flat_points: flat_points.clone(),
            flat_order: 5,
        })
        .collect();
    let profiles = NoiseProfileSet::new(grid, profiles)?;
    let driver = match n.driver {
        config::DriverConfig::Brownian => {
            let dt = n.path_dt.unwrap_or(cfg.evolve.dt0);
            let steps = (((t1 - t0) / dt) - 1e-9).ceil().max(1.0) as usize;
            Driver::Brownian(BrownianPath::uniform(n.seed, t0, dt, steps, n.modes)?)
        }
        config::DriverConfig::Sinusoid => Driver::Sinusoid { amplitude: 1.0, omega: n.omega, modes: n.modes },
    };
    Ok(Some(NoiseSetup { profiles, driver }))
}

/// Builds grid, ground state, initial data and evolution settings.
/// `base` resolves `initial.file`. Every failure is a configuration error.
pub fn prepare(cfg: &ScenarioConfig, base: &Path) -> Result<Prepared> {
    prepare_inner(cfg, base).map_err(as_config)
}

fn prepare_inner(cfg: &ScenarioConfig, base: &Path) -> Result<Prepared> {
    cfg.validate()?;
    let grid = GridSpec::new(cfg.grid.dim, cfg.grid.length, cfg.grid.points)?;
    let p = cfg.p();
    let q = QProfile::new(grid.dim(), p)?;
    let e = &cfg.evolve;
    let (t0, t1) = (e.t0, cfg.t1());
    let blowup = || ProfileParams::Blowup(BlowupParams { t_blow: cfg.t_blow(), bubbles: cfg.bubbles() });
    let solitons = || ProfileParams::Solitons(SolitonParams { solitons: cfg.solitons(), p });
    let z_dt = cfg.profile.z_dt.unwrap_or(e.dt0);

    let mut regular = None;
    let (initial, reference) = match cfg.kind {
        ScenarioKind::CriticalBlowup | ScenarioKind::MultiBubble | ScenarioKind::SnlsGaugeCheck => {
            let r = blowup();
            (r.evaluate(t0, &grid, &q)?, Some(r))
        }
        ScenarioKind::BourgainWang => {
            let r = blowup();
            let z = backward_solve(&regular_profile(cfg, &grid, &q)?, cfg.t_blow(), t0, p, z_dt, 0.1)?;
            let v0 = r.evaluate(t0, &grid, &q)?.add(&z)?;
            regular = Some(z);
            (v0, Some(r))
        }
        ScenarioKind::MultiSoliton => {
            let r = solitons();
            (r.evaluate(t0, &grid, &q)?, Some(r))
        }
        ScenarioKind::NonpureSoliton => {
            // the regular part solves NLS with y(0) = z*, read at s = -1/t0
            let y = backward_solve(&regular_profile(cfg, &grid, &q)?, 0.0, -1.0 / t0, p, z_dt, 0.1)?;
            let (z, _) = pseudo_conformal_map(&y, t0, 0.0, MapDirection::Inverse)?;
            let r = solitons();
            let v0 = r.evaluate(t0, &grid, &q)?.add(&z)?;
            regular = Some(z);
            (v0, Some(r))
        }
        ScenarioKind::LoglogSupercritical | ScenarioKind::Custom => {
            let init = &cfg.initial;
            let v0 = match &init.file {
                Some(f) => {
                    let (field, _) = read_snapshot(BufReader::new(File::open(base.join(f))?))?;
                    if *field.grid() != grid {
                        return Err(LabError::Config(format!("snapshot {f} does not match the configured grid")));
                    }
                    field
                }
                None => {
                    let g = gaussian(&grid, init.center, init.width, init.momentum);
                    let factor = match (cfg.kind, init.mass_factor) {
                        (_, Some(m)) => (m * q.mass / g.norm_sq()).sqrt(),
                        (ScenarioKind::LoglogSupercritical, None) => (1.2 * q.mass / g.norm_sq()).sqrt(),
                        _ => init.amplitude,
                    };
                    g.scale(Complex64::new(factor, 0.0))
                }
            };
            let reference = if !cfg.profile.solitons.is_empty() {
                Some(solitons())
            } else if !cfg.profile.bubbles.is_empty() {
                Some(blowup())
            } else {
                None
            };
            (v0, reference)
        }
    };

    let mut evolve = EvolveConfig::new(initial, p, t1, e.dt0);
    evolve.t0 = t0;
    evolve.adaptive = e.adaptive;
    evolve.cadence = e.cadence;
    evolve.output_times = e.output_times.clone();
    evolve.g_max = e.g_max.unwrap_or(f64::INFINITY);
    evolve.width_factor = e.width_factor;
    evolve.loc_radius = e.loc_radius;
    evolve.noise = noise_setup(cfg, &grid, t0, t1)?;
    evolve.reference = reference.clone().map(|params| Reference { params, q: q.clone() });

    let banica_profiles = match &evolve.noise {
        Some(n) => n.profiles.clone(),
        None => {
            let probe = NoiseProfile {
                kind: ProfileKind::Schwartz { sigma: grid.extent() / 8.0 },
                amplitude: 1.0,
                dim: grid.dim(),
                center: [0.0; 2],
                flat_points: Vec::new(),
                flat_order: 5,
            };
            NoiseProfileSet::new(&grid, vec![probe])?
        }
    };
    Ok(Prepared { config: cfg.clone(), grid, q, evolve, reference, regular, banica_profiles })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Concentration {
    #[serde(rename = "R")]
    pub r: f64,
    pub center: [f64; 2],
    pub mass: f64,
    /// Localized mass over `||Q||²`.
    pub fraction: f64,
}

/// Output of the diagnostic battery on one trajectory.
#[derive(Debug, Clone)]
pub struct Battery {
    pub mass_drift: f64,
    pub hamiltonian_drift: f64,
    pub rate: Option<RateFit>,
    pub rate_note: Option<String>,
    pub t_extrap: Option<f64>,
    pub banica: Vec<(f64, usize, BanicaReport)>,
    /// `None` above the critical mass, where the inequality is not claimed.
    pub banica_ok: Option<bool>,
    pub h_evo: Option<HamiltonianSeries>,
    pub modulation: Option<ModulationFit>,
    pub virial_center: [f64; 2],
    pub virial: Option<(VirialSeries, VirialSeries)>,
    pub concentration: Concentration,
    pub profile_rows: Vec<(f64, ProfileResiduals)>,
}

/// Runs every applicable diagnostic over the recorded snapshots.
pub fn run_battery(prep: &Prepared, traj: &Trajectory) -> Result<Battery> {
    let q = &prep.q;
    let mass_drift = traj.mass_drift();
    let hamiltonian_drift = traj.hamiltonian_drift();

    let t = traj.times();
    let (tt, gg) = last_decade(&t, &traj.gauged_grad_norm);
    let (rate, rate_note) = match blowup_rate_fit(&tt, &gg) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let t_extrap = traj.estimate_blowup_time();

    let mut banica = Vec::new();
    let banica_ok = if traj.snapshots[0].field.l2_norm() <= q.l2_norm() + 1e-8 {
        for s in &traj.snapshots {
            for l in 0..prep.banica_profiles.modes() {
                banica.push((s.t, l, banica_check(&s.field, prep.banica_profiles.grad(l), q.mass)?));
            }
        }
        Some(banica.iter().all(|b| b.2.satisfied))
    } else {
        None
    };

    let h_evo = match &prep.evolve.noise {
        Some(n) if traj.driver_values.is_some() => hamiltonian_evolution_residual(traj, &n.profiles).ok(),
        _ => None,
    };

    let last = traj.last_snapshot();
    let modulation = modulation_fit(&last.field, q).ok();
    let virial_center = modulation.map_or(traj.diagnostics.last().unwrap().center, |m| m.center);
    let virial = if traj.snapshots.len() >= 2 {
        let cut = CutoffSpec::new(prep.grid.extent() / 8.0)?;
        Some((
            virial_evolution_residual(traj, virial_center, None)?,
            virial_evolution_residual(traj, virial_center, Some(&cut))?,
        ))
    } else {
        None
    };
    let r = prep.evolve.loc_radius;
    let mass = localized_mass(&last.field, virial_center, r);
    let concentration = Concentration { r, center: virial_center, mass, fraction: mass / q.mass };

    let mut profile_rows = Vec::new();
    if let Some(params) = &prep.reference {
        let z_dt = prep.config.profile.z_dt.unwrap_or(prep.config.evolve.dt0);
        let mut z = prep.regular.clone();
        let mut tz = prep.evolve.t0;
        for s in &traj.snapshots {
            if let Some(zf) = z.as_mut() {
                let span = s.t - tz;
                if span > 0.0 {
                    *zf = evolve_fixed(zf, traj.p, span, ((span / z_dt).ceil() as usize).max(1))?;
                }
                tz = s.t;
            }
            match profile_residuals(&s.field, s.t, params, q, z.as_ref()) {
                Ok(res) => profile_rows.push((s.t, res)),
                Err(_) => break,
            }
        }
    }
    Ok(Battery {
        mass_drift,
        hamiltonian_drift,
        rate,
        rate_note,
        t_extrap,
        banica,
        banica_ok,
        h_evo,
        modulation,
        virial_center,
        virial,
        concentration,
        profile_rows,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualMax {
    pub l2: f64,
    pub h1: f64,
    pub sigma: f64,
    pub component_h1: f64,
    pub until: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GaugeReport {
    pub max_modulus_diff: f64,
    pub compared_snapshots: usize,
    pub same_stop_step: bool,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub kind: &'static str,
    pub stop_reason: &'static str,
    pub final_time: f64,
    pub steps: usize,
    #[serde(rename = "T_est")]
    pub t_est: Option<f64>,
    #[serde(rename = "T_extrap")]
    pub t_extrap: Option<f64>,
    pub alpha: Option<f64>,
    pub loglog_score: Option<f64>,
    pub rate_law: Option<RateLaw>,
    pub rate_note: Option<String>,
    pub mass_drift: f64,
    pub mass_drift_limit: f64,
    pub hamiltonian_drift: f64,
    pub banica_ok: Option<bool>,
    pub banica_min_margin: Option<f64>,
    pub h_evo_max_residual: Option<f64>,
    pub virial_center: [f64; 2],
    pub virial_max_residual: Option<f64>,
    pub virial_cut_max_residual: Option<f64>,
    pub concentration: Concentration,
    pub modulation: Option<ModulationFit>,
    pub profile_residual_max: Option<ResidualMax>,
    pub gauge: Option<GaugeReport>,
    pub determinism_ok: bool,
    pub checks_passed: bool,
}

fn residual_max(rows: &[(f64, ProfileResiduals)]) -> Option<ResidualMax> {
    let until = rows.last()?.0;
    let mut m = ResidualMax { l2: 0.0, h1: 0.0, sigma: 0.0, component_h1: 0.0, until };
    for (_, r) in rows {
        m.l2 = m.l2.max(r.l2);
        m.h1 = m.h1.max(r.h1);
        m.sigma = m.sigma.max(r.sigma);
        for c in &r.components {
            m.component_h1 = m.component_h1.max(c.h1);
        }
    }
    Some(m)
}

fn mass_limit(prep: &Prepared) -> f64 {
    prep.config.checks.mass_drift.unwrap_or(if prep.evolve.noise.is_some() { 1e-10 } else { 1e-12 })
}

fn summarize(prep: &Prepared, traj: &Trajectory, b: &Battery, gauge: Option<GaugeReport>, determinism_ok: bool) -> Summary {
    let mass_drift_limit = mass_limit(prep);
    let checks_passed = b.mass_drift < mass_drift_limit
        && b.banica_ok != Some(false)
        && determinism_ok
        && gauge.map_or(true, |g| g.ok);
    Summary {
        kind: prep.config.kind.as_str(),
        stop_reason: traj.stop_reason.as_str(),
        final_time: traj.final_time(),
        steps: traj.steps(),
        t_est: b.rate.map(|r| r.t_est),
        t_extrap: b.t_extrap,
        alpha: b.rate.map(|r| r.alpha),
        loglog_score: b.rate.map(|r| r.loglog_score),
        rate_law: b.rate.map(|r| r.law),
        rate_note: b.rate_note.clone(),
        mass_drift: b.mass_drift,
        mass_drift_limit,
        hamiltonian_drift: b.hamiltonian_drift,
        banica_ok: b.banica_ok,
        banica_min_margin: b.banica_ok.map(|_| b.banica.iter().map(|x| x.2.rhs - x.2.lhs).fold(f64::INFINITY, f64::min)),
        h_evo_max_residual: b.h_evo.as_ref().map(|h| h.max_abs_residual()),
        virial_center: b.virial_center,
        virial_max_residual: b.virial.as_ref().map(|v| v.0.max_abs_residual()),
        virial_cut_max_residual: b.virial.as_ref().map(|v| v.1.max_abs_residual()),
        concentration: b.concentration,
        modulation: b.modulation,
        profile_residual_max: residual_max(&b.profile_rows),
        gauge,
        determinism_ok,
        checks_passed,
    }
}

/// Re-integrates the first steps and compares every diagnostic bitwise.
fn determinism_check(prep: &Prepared, traj: &Trajectory) -> Result<bool> {
    let k = prep.config.checks.determinism_steps.min(traj.steps());
    if k == 0 {
        return Ok(true);
    }
    let mut cfg = prep.evolve.clone();
    cfg.t1 = traj.diagnostics[k].t;
    let again = integrate(&cfg)?;
    if again.diagnostics.len() != k + 1 {
        return Ok(false);
    }
    let bits = |r: &crate::evolution::DiagnosticRow| {
        [r.t, r.mass, r.hamiltonian, r.grad_norm, r.lambda, r.center[0], r.center[1], r.loc_mass, r.residual].map(f64::to_bits)
    };
    Ok(again.diagnostics.iter().zip(&traj.diagnostics).all(|(a, b)| bits(a) == bits(b)))
}

/// Deterministic twin of a noisy run, compared snapshot by snapshot.
fn gauge_check(prep: &Prepared, traj: &Trajectory) -> Result<GaugeReport> {
    let mut cfg = prep.evolve.clone();
    cfg.noise = None;
    let det = integrate(&cfg)?;
    let mut max_diff: f64 = 0.0;
    let mut compared = 0;
    for s in &traj.snapshots {
        if let Some(d) = det.snapshots.iter().find(|d| d.step == s.step && d.t == s.t) {
            compared += 1;
            for (a, b) in s.field.values().iter().zip(d.field.values()) {
                max_diff = max_diff.max((a.norm() - b.norm()).abs());
            }
        }
    }
    let same_stop_step = det.steps() == traj.steps() && det.stop_reason == traj.stop_reason;
    let ok = same_stop_step && compared == traj.snapshots.len() && max_diff < prep.config.checks.gauge_tolerance;
    Ok(GaugeReport { max_modulus_diff: max_diff, compared_snapshots: compared, same_stop_step, ok })
}

/// Integration only: diagnostics, driver dump and snapshots.
pub fn write_evolution(prep: &Prepared, traj: &Trajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), toml::to_string(&prep.config).map_err(|e| LabError::Parse(e.to_string()))?)?;
    artifacts::write_diagnostics(&dir.join(artifacts::DIAGNOSTICS_CSV), traj)?;
    artifacts::write_path(&dir.join(artifacts::PATH_CSV), traj)?;
    artifacts::write_rate_series(&dir.join(artifacts::RATE_CSV), &traj.times(), &traj.gauged_grad_norm)?;
    artifacts::write_snapshots(dir, traj, prep.config.evolve.write_snapshots)?;
    Ok(())
}

/// Per-check CSVs of a battery.
pub fn write_battery(b: &Battery, dir: &Path) -> Result<()> {
    if !b.banica.is_empty() {
        artifacts::write_banica(&dir.join("banica.csv"), &b.banica)?;
    }
    if let Some((plain, cut)) = &b.virial {
        artifacts::write_virial(&dir.join("virial.csv"), plain, cut)?;
    }
    if let Some(h) = &b.h_evo {
        artifacts::write_hamiltonian_series(&dir.join("hamiltonian_evolution.csv"), h)?;
    }
    if !b.profile_rows.is_empty() {
        artifacts::write_profile_residuals(&dir.join("profile_residuals.csv"), &b.profile_rows)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
    pub trajectory: Trajectory,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.checks_passed {
            EXIT_OK
        } else {
            EXIT_NUMERICAL
        }
    }
}

/// Runs a prepared scenario into `dir`.
pub fn run_prepared(prep: &Prepared, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir)?;
    let traj = integrate(&prep.evolve)?;
    write_evolution(prep, &traj, dir)?;
    let battery = run_battery(prep, &traj)?;
    write_battery(&battery, dir)?;
    let gauge = match prep.config.kind {
        ScenarioKind::SnlsGaugeCheck => Some(gauge_check(prep, &traj)?),
        _ => None,
    };
    let determinism_ok = determinism_check(prep, &traj)?;
    let summary = summarize(prep, &traj, &battery, gauge, determinism_ok);
    artifacts::write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunOutcome { dir: dir.to_path_buf(), summary, trajectory: traj })
}

/// Validates, then runs a single scenario. Configuration errors leave no files.
pub fn run_scenario(cfg: &ScenarioConfig, base: &Path, dir: &Path) -> Result<RunOutcome> {
    let prep = prepare(cfg, base)?;
    run_prepared(&prep, dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberRow {
    pub index: usize,
    pub seed: u64,
    pub stop_reason: &'static str,
    pub stop_time: f64,
    pub steps: usize,
    #[serde(rename = "T_est")]
    pub t_est: Option<f64>,
    pub checks_passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub members: Vec<MemberRow>,
    pub median_t_est: Option<f64>,
    pub quartiles_t_est: Option<[f64; 2]>,
    pub median_stop_time: f64,
    pub all_passed: bool,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Aggregates member rows in index order. `T_est` is the rate-fit time,
/// falling back to the linear extrapolation.
pub fn ensemble_summary(rows: Vec<MemberRow>) -> Result<EnsembleSummary> {
    if rows.len() < 2 {
        return Err(LabError::InsufficientData("an ensemble summary needs at least two members".into()));
    }
    let mut rows = rows;
    rows.sort_by_key(|r| r.index);
    let mut est: Vec<f64> = rows.iter().filter_map(|r| r.t_est).collect();
    est.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut stops: Vec<f64> = rows.iter().map(|r| r.stop_time).collect();
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(EnsembleSummary {
        median_t_est: (!est.is_empty()).then(|| quantile(&est, 0.5)),
        quartiles_t_est: (!est.is_empty()).then(|| [quantile(&est, 0.25), quantile(&est, 0.75)]),
        median_stop_time: quantile(&stops, 0.5),
        all_passed: rows.iter().all(|r| r.checks_passed),
        members: rows,
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub dir: PathBuf,
    pub summary: EnsembleSummary,
}

impl EnsembleOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.all_passed {
            EXIT_OK
        } else {
            EXIT_NUMERICAL
        }
    }
}

fn write_ensemble_csv(path: &Path, s: &EnsembleSummary) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(File::create(path)?);
    writeln!(w, "index,seed,stop_reason,stop_time,steps,T_est,checks_passed")?;
    for r in &s.members {
        let est = r.t_est.map_or("NaN".to_string(), |x| format!("{x:.16e}"));
        writeln!(w, "{},{},{},{:.16e},{},{est},{}", r.index, r.seed, r.stop_reason, r.stop_time, r.steps, r.checks_passed as u8)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `config.ensemble` members (seeds `seed + index`) on `threads`
/// workers (all cores when `None`), each into `member_XXX/`.
pub fn run_ensemble(cfg: &ScenarioConfig, base: &Path, dir: &Path, threads: Option<usize>) -> Result<EnsembleOutcome> {
    let n = cfg.ensemble;
    let preps = (0..n).map(|i| prepare(&cfg.member(i), base)).collect::<Result<Vec<_>>>()?;
    if n < 2 {
        return Err(LabError::Config("ensemble needs at least two members".into()));
    }
    fs::create_dir_all(dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads.or(cfg.threads) {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| LabError::InvalidParameter(e.to_string()))?;
    let results: Vec<Result<MemberRow>> = pool.install(|| {
        preps
            .par_iter()
            .enumerate()
            .map(|(i, prep)| {
                let out = run_prepared(prep, &dir.join(format!("member_{i:03}")))?;
                Ok(MemberRow {
                    index: i,
                    seed: prep.config.noise.seed,
                    stop_reason: out.summary.stop_reason,
                    stop_time: out.summary.final_time,
                    steps: out.summary.steps,
                    t_est: out.summary.t_est.or(out.summary.t_extrap),
                    checks_passed: out.summary.checks_passed,
                })
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = ensemble_summary(rows)?;
    write_ensemble_csv(&dir.join("ensemble.csv"), &summary)?;
    artifacts::write_json(&dir.join("ensemble.json"), &summary)?;
    Ok(EnsembleOutcome { dir: dir.to_path_buf(), summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub banica_ok: Option<bool>,
    pub h_evo_max_residual: Option<f64>,
    pub virial_series: Option<VirialSeries>,
    #[serde(rename = "T_est")]
    pub t_est: Option<f64>,
    pub alpha: Option<f64>,
    pub loglog_score: Option<f64>,
    pub concentration: Concentration,
}

/// Re-runs the diagnostic battery on the dumps of a finished run.
pub fn diagnose_dir(dir: &Path, out: &Path) -> Result<DiagnoseReport> {
    let cfg = ScenarioConfig::load(&dir.join("config.toml"))?;
    let prep = prepare(&cfg, dir)?;
    let summary: Option<serde_json::Value> = fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    let stop = match summary.as_ref().and_then(|s| s["stop_reason"].as_str()) {
        Some("blowup_threshold") => StopReason::BlowupThreshold,
        Some("width_under_resolved") => StopReason::WidthUnderResolved,
        Some("step_underflow") => StopReason::StepUnderflow,
        Some("non_finite") => StopReason::NonFinite,
        _ => StopReason::ReachedEnd,
    };
    let traj = artifacts::load_trajectory(dir, prep.evolve.p, stop)?;
    if traj.grid != prep.grid {
        return Err(LabError::GridMismatch);
    }
    let b = run_battery(&prep, &traj)?;
    fs::create_dir_all(out)?;
    write_battery(&b, out)?;
    let report = DiagnoseReport {
        banica_ok: b.banica_ok,
        h_evo_max_residual: b.h_evo.as_ref().map(|h| h.max_abs_residual()),
        virial_series: b.virial.map(|v| v.0),
        t_est: b.rate.map(|r| r.t_est),
        alpha: b.rate.map(|r| r.alpha),
        loglog_score: b.rate.map(|r| r.loglog_score),
        concentration: b.concentration,
    };
    artifacts::write_json(&out.join("diagnose.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: &str, extra: &str) -> ScenarioConfig {
        let text = format!(
            "kind = \"{kind}\"\ngrid.dim = 1\ngrid.length = 40.0\ngrid.points = 512\nevolve.dt0 = 0.002\nevolve.t1 = 0.1\n{extra}"
        );
        ScenarioConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn quantiles_and_summary_order() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        let row = |i: usize, t: f64| MemberRow { index: i, seed: i as u64, stop_reason: "reached_end", stop_time: t, steps: 3, t_est: Some(t), checks_passed: true };
        let s = ensemble_summary(vec![row(2, 3.0), row(0, 1.0), row(1, 2.0)]).unwrap();
        assert_eq!(s.members.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(s.median_t_est, Some(2.0));
        assert!(ensemble_summary(vec![row(0, 1.0)]).is_err());
    }

    #[test]
    fn gauge_scenario_matches_deterministic_moduli() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small("snls_gauge_check", "noise.kind = \"constant\"\nnoise.amplitude = 0.7\nnoise.seed = 3\nevolve.cadence = 5\n");
        let out = run_scenario(&cfg, dir.path(), dir.path()).unwrap();
        let g = out.summary.gauge.unwrap();
        assert!(g.ok && g.max_modulus_diff < 1e-10, "{g:?}");
        assert!(out.summary.checks_passed);
        assert!(dir.path().join("path.csv").exists());
    }

    #[test]
    fn diagnose_reproduces_run_battery() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small("critical_blowup", "evolve.write_snapshots = true\nevolve.cadence = 5\n");
        let out = run_scenario(&cfg, dir.path(), dir.path()).unwrap();
        let rep = diagnose_dir(dir.path(), &dir.path().join("again")).unwrap();
        assert_eq!(rep.banica_ok, out.summary.banica_ok);
        assert_eq!(rep.concentration.fraction.to_bits(), out.summary.concentration.fraction.to_bits());
    }

    #[test]
    fn bourgain_wang_regular_part_is_small() {
        let text = "kind = \"bourgain_wang\"\ngrid.dim = 1\ngrid.length = 64.0\ngrid.points = 1024\n\
                    profile.bubbles = [{ x = [-10.0, 0.0] }, { x = [10.0, 0.0] }]\nevolve.dt0 = 0.002\n";
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        let prep = prepare(&cfg, Path::new(".")).unwrap();
        let z = prep.regular.as_ref().unwrap();
        assert!((h1_norm(z) - 0.05 * prep.q.h1_norm()).abs() < 0.02 * prep.q.h1_norm());
    }
}
