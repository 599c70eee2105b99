//! Split-step time integration of NLS and gNLS, with SNLS handled through
//! the gauge `X = e^{W} v`.
//!
//! Time is measured on an integer lattice of `dt0 / 2^24` ticks. Every step
//! has length `dt0 / 2^j` (possibly shortened to land on an output time), so
//! runs with different noise settings but the same gradient history take the
//! same steps, and Brownian values are always requested at dyadic nodes.

use serde::Serialize;

use crate::diagnostics::{localized_mass, peak_center};
use crate::error::{LabError, Result};
use crate::exact::ProfileParams;
use crate::grid::{ComplexField, GridSpec, Spectral};
use crate::ground_state::QProfile;
use crate::noise::{gauge_with_values, Coefficients, Driver, GaugeDirection, NoiseProfileSet};
use crate::Complex64;

/// Tick resolution below `dt0`.
pub const TICK_LEVELS: u32 = 24;
/// Depth used when looking Brownian values up on the path lattice.
const PATH_LOOKUP_LEVEL: u32 = 40;

/// `|z|^{p-1}` from `|z|²`.
#[inline]
fn nl_power(s: f64, p: f64) -> f64 {
    if p == 5.0 {
        s * s
    } else if p == 3.0 {
        s
    } else {
        s.powf(0.5 * (p - 1.0))
    }
}

/// `e^{iθ}` nudged by at most one ulp per component so that `|z|² - 1` is as
/// small as representable. Cached propagator factors are applied thousands
/// of times, and a fixed modulus error would otherwise accumulate linearly.
fn unit_phase(theta: f64) -> Complex64 {
    let (s, c) = theta.sin_cos();
    let defect = |c: f64, s: f64| c.mul_add(c, s.mul_add(s, -1.0)).abs();
    let nudge = |x: f64| [x, x.next_up(), x.next_down()];
    let mut best = (c, s, defect(c, s));
    for cc in nudge(c) {
        for ss in nudge(s) {
            let d = defect(cc, ss);
            if d < best.2 {
                best = (cc, ss, d);
            }
        }
    }
    Complex64::new(best.0, best.1)
}

/// Reusable FFT workspace for the split-step substeps.
pub struct Stepper {
    sp: Spectral,
    lin_dt: f64,
    lin: Vec<Complex64>,
}

impl Stepper {
    pub fn new(grid: &GridSpec) -> Self {
        Self { sp: Spectral::new(grid), lin_dt: f64::NAN, lin: Vec::new() }
    }

    pub fn spectral(&mut self) -> &mut Spectral {
        &mut self.sp
    }

    fn nonlinear(v: &mut [Complex64], tau: f64, p: f64) {
        for z in v.iter_mut() {
            *z *= Complex64::from_polar(1.0, nl_power(z.norm_sqr(), p) * tau);
        }
    }

    fn linear(&mut self, v: &mut [Complex64], dt: f64) {
        if self.lin_dt.to_bits() != dt.to_bits() {
            self.lin = self.sp.ksq().iter().map(|k| unit_phase(-k * dt)).collect();
            self.lin_dt = dt;
        }
        let before: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        self.sp.forward(v);
        for (z, e) in v.iter_mut().zip(&self.lin) {
            *z *= e;
        }
        self.sp.inverse(v);
        // the FFT round trip inflates the norm by ~1e-16 per call, always upward
        let after: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        // A multiplier this close to 1 would itself round to a whole ulp, so
        // the relative correction is applied as a small increment instead.
        if after > 0.0 {
            let eps = 0.5 * (before - after) / after;
            for z in v.iter_mut() {
                *z += *z * eps;
            }
        }
    }

    /// `i (a₁·∇v + a₀ v)`.
    fn coefficient_rhs(&mut self, v: &[Complex64], c: &Coefficients) -> Vec<Complex64> {
        let grad = self.sp.gradient(v);
        let i = Complex64::new(0.0, 1.0);
        (0..v.len())
            .map(|n| {
                let mut acc = c.a0[n] * v[n];
                for (a1, g) in c.a1.iter().zip(&grad) {
                    acc += a1[n] * g[n];
                }
                i * acc
            })
            .collect()
    }

    fn coefficient_flow(&mut self, v: &mut [Complex64], h: f64, c: &Coefficients) {
        let stage = |base: &[Complex64], k: &[Complex64], s: f64| -> Vec<Complex64> {
            base.iter().zip(k).map(|(b, k)| b + k * s).collect()
        };
        let k1 = self.coefficient_rhs(v, c);
        let k2 = self.coefficient_rhs(&stage(v, &k1, 0.5 * h), c);
        let k3 = self.coefficient_rhs(&stage(v, &k2, 0.5 * h), c);
        let k4 = self.coefficient_rhs(&stage(v, &k3, h), c);
        for n in 0..v.len() {
            v[n] += (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]) * (h / 6.0);
        }
    }

    /// `N(dt/2) L(dt) N(dt/2)` in place.
    pub fn strang(&mut self, v: &mut [Complex64], dt: f64, p: f64) {
        Self::nonlinear(v, 0.5 * dt, p);
        self.linear(v, dt);
        Self::nonlinear(v, 0.5 * dt, p);
    }

    /// `C(dt/2) N(dt/2) L(dt) N(dt/2) C(dt/2)` in place; `C` is skipped for
    /// vanishing coefficients.
    pub fn gnls(&mut self, v: &mut [Complex64], dt: f64, p: f64, c: &Coefficients) {
        if c.is_zero() {
            return self.strang(v, dt, p);
        }
        self.coefficient_flow(v, 0.5 * dt, c);
        self.strang(v, dt, p);
        self.coefficient_flow(v, 0.5 * dt, c);
    }
}

/// One Strang step of `i∂_t v + Δv + |v|^{p-1} v = 0`.
pub fn step_strang(v: &ComplexField, dt: f64, p: f64) -> Result<ComplexField> {
    if !(dt > 0.0) {
        return Err(LabError::InvalidParameter(format!("step {dt} must be positive")));
    }
    let mut st = Stepper::new(v.grid());
    let mut out = v.values().to_vec();
    st.strang(&mut out, dt, p);
    ComplexField::from_values(v.grid(), out).map_err(|_| LabError::NonFinite("Strang step".into()))
}

/// One gNLS step with coefficients frozen over the step.
pub fn step_gnls(v: &ComplexField, dt: f64, p: f64, c: &Coefficients) -> Result<ComplexField> {
    if !(dt > 0.0) {
        return Err(LabError::InvalidParameter(format!("step {dt} must be positive")));
    }
    if c.a0.len() != v.values().len() || c.a1.len() != v.grid().dim() {
        return Err(LabError::GridMismatch);
    }
    let mut st = Stepper::new(v.grid());
    let mut out = v.values().to_vec();
    st.gnls(&mut out, dt, p, c);
    ComplexField::from_values(v.grid(), out).map_err(|_| LabError::NonFinite("gNLS step".into()))
}

/// Noise data for SNLS: profiles `φ_l` and drivers `h_l`.
#[derive(Debug, Clone)]
pub struct NoiseSetup {
    pub profiles: NoiseProfileSet,
    pub driver: Driver,
}

/// Exact profile the run is compared against in the `residual` column.
#[derive(Debug, Clone)]
pub struct Reference {
    pub params: ProfileParams,
    pub q: QProfile,
}

#[derive(Debug, Clone)]
pub struct EvolveConfig {
    pub p: f64,
    /// Physical initial state `X(t0)`.
    pub initial: ComplexField,
    pub t0: f64,
    pub t1: f64,
    pub dt0: f64,
    pub adaptive: bool,
    pub noise: Option<NoiseSetup>,
    /// Snapshot every `cadence` accepted steps.
    pub cadence: usize,
    /// Times at which steps are clamped and snapshots forced.
    pub output_times: Vec<f64>,
    /// Stop once `||∇v|| ≥ g_max`.
    pub g_max: f64,
    /// Stop once `λ < width_factor · Δx`.
    pub width_factor: f64,
    /// Radius of the `loc_mass` column.
    pub loc_radius: f64,
    pub reference: Option<Reference>,
}

impl EvolveConfig {
    pub fn new(initial: ComplexField, p: f64, t1: f64, dt0: f64) -> Self {
        Self {
            p,
            initial,
            t0: 0.0,
            t1,
            dt0,
            adaptive: true,
            noise: None,
            cadence: 1,
            output_times: Vec::new(),
            g_max: f64::INFINITY,
            width_factor: 4.0,
            loc_radius: 1.0,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedEnd,
    BlowupThreshold,
    WidthUnderResolved,
    StepUnderflow,
    NonFinite,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ReachedEnd => "reached_end",
            Self::BlowupThreshold => "blowup_threshold",
            Self::WidthUnderResolved => "width_under_resolved",
            Self::StepUnderflow => "step_underflow",
            Self::NonFinite => "non_finite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    /// `||X||_{L^2}`.
    pub mass: f64,
    pub hamiltonian: f64,
    pub grad_norm: f64,
    pub lambda: f64,
    pub center: [f64; 2],
    pub loc_mass: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    /// Index into the diagnostic series.
    pub step: usize,
    pub field: ComplexField,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: GridSpec,
    pub p: f64,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<DiagnosticRow>,
    /// `h(t_k)` at every diagnostic row, present iff noise is on.
    pub driver_values: Option<Vec<Vec<f64>>>,
    pub stop_reason: StopReason,
    /// `||∇v||` of the gauged variable at every row.
    pub gauged_grad_norm: Vec<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.diagnostics.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|r| r.t).collect()
    }

    pub fn final_time(&self) -> f64 {
        self.diagnostics.last().unwrap().t
    }

    pub fn last_snapshot(&self) -> &Snapshot {
        self.snapshots.last().unwrap()
    }

    /// Snapshot recorded exactly at `t`, if any.
    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// `h(t_{k+1}) - h(t_k)` per accepted step.
    pub fn increments(&self) -> Option<Vec<Vec<f64>>> {
        self.driver_values
            .as_ref()
            .map(|b| b.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(x, y)| x - y).collect()).collect())
    }

    /// Largest relative deviation of the mass from its initial value.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.diagnostics[0].mass;
        self.diagnostics.iter().map(|r| (r.mass - m0).abs() / m0).fold(0.0, f64::max)
    }

    /// Largest `|H(t) - H(t0)|`.
    pub fn hamiltonian_drift(&self) -> f64 {
        let h0 = self.diagnostics[0].hamiltonian;
        self.diagnostics.iter().map(|r| (r.hamiltonian - h0).abs()).fold(0.0, f64::max)
    }

    /// Blow-up time from a linear fit of `1/||∇v||` over the last decade of growth.
    pub fn estimate_blowup_time(&self) -> Option<f64> {
        let t: Vec<f64> = self.times();
        estimate_blowup_time(&t, &self.gauged_grad_norm)
    }
}

/// Linear extrapolation of `1/g` to zero over samples with `g ≥ g_last/10`.
pub fn estimate_blowup_time(t: &[f64], g: &[f64]) -> Option<f64> {
    let g_last = *g.last()?;
    let g_min = g.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(g_last >= 10.0 * g_min) {
        return None;
    }
    let pts: Vec<(f64, f64)> = t.iter().zip(g).filter(|(_, &gi)| gi >= 0.1 * g_last).map(|(&ti, &gi)| (ti, 1.0 / gi)).collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return None;
    }
    Some(mt - my / slope)
}

/// `½||∇v||² - 1/(p+1) ∫|v|^{p+1}` given the gradient norm squared.
fn hamiltonian_from(grad_sq: f64, v: &[Complex64], p: f64, vol: f64) -> f64 {
    let lp: f64 = v.iter().map(|z| z.norm_sqr() * nl_power(z.norm_sqr(), p)).sum::<f64>() * vol;
    0.5 * grad_sq - lp / (p + 1.0)
}

struct RowContext<'a> {
    grid: GridSpec,
    p: f64,
    q_grad: f64,
    loc_radius: f64,
    reference: Option<&'a Reference>,
}

impl RowContext<'_> {
    fn row(&self, sp: &mut Spectral, x: &ComplexField, t: f64) -> DiagnosticRow {
        let vol = self.grid.cell_volume();
        let grad_sq = sp.grad_norm_sq(x.values());
        let mass = x.l2_norm();
        let center = peak_center(x);
        let residual = match self.reference {
            Some(r) => r
                .params
                .evaluate(t, &self.grid, &r.q)
                .ok()
                .and_then(|e| x.sub(&e).ok())
                .map(|d| d.l2_norm())
                .unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        DiagnosticRow {
            t,
            mass,
            hamiltonian: hamiltonian_from(grad_sq, x.values(), self.p, vol),
            grad_norm: grad_sq.sqrt(),
            lambda: self.q_grad / grad_sq.sqrt(),
            center,
            loc_mass: localized_mass(x, center, self.loc_radius),
            residual,
        }
    }
}

fn profile_for(dim: usize, p: f64) -> Result<QProfile> {
    QProfile::new(dim, p)
}

/// Integrates the configured problem; see the module documentation for the
/// stepping rules.
pub fn integrate(config: &EvolveConfig) -> Result<Trajectory> {
    let grid = *config.initial.grid();
    let p = config.p;
    if !(config.dt0 > 0.0) || !(config.t1 > config.t0) || config.cadence == 0 {
        return Err(LabError::InvalidParameter("need dt0 > 0, t1 > t0 and cadence ≥ 1".into()));
    }
    let q = profile_for(grid.dim(), p)?;
    let ctx = RowContext {
        grid,
        p,
        q_grad: q.grad_norm(),
        loc_radius: config.loc_radius,
        reference: config.reference.as_ref(),
    };
    let tick_dt = config.dt0 / (1u64 << TICK_LEVELS) as f64;
    let t_of = |tick: u64| config.t0 + tick as f64 * tick_dt;
    let to_tick = |t: f64| ((t - config.t0) / tick_dt).round() as u64;
    let end_tick = to_tick(config.t1);
    let mut outputs: Vec<u64> = config
        .output_times
        .iter()
        .filter(|&&t| t > config.t0 && t <= config.t1)
        .map(|&t| to_tick(t))
        .collect();
    outputs.sort_unstable();
    outputs.dedup();

    let mut driver = config.noise.as_ref().map(|n| n.driver.clone());
    let profiles = config.noise.as_ref().map(|n| &n.profiles);
    if let Some(pr) = profiles {
        if pr.grid() != &grid {
            return Err(LabError::GridMismatch);
        }
        if pr.modes() != driver.as_ref().unwrap().modes() {
            return Err(LabError::InvalidParameter("driver and profile mode counts differ".into()));
        }
    }
    let mut b = match driver.as_mut() {
        Some(d) => Some(d.values_at(config.t0, PATH_LOOKUP_LEVEL)?),
        None => None,
    };
    let physical = |v: &[Complex64], b: &Option<Vec<f64>>| -> Result<ComplexField> {
        let f = ComplexField::from_values(&grid, v.to_vec())?;
        match (profiles, b) {
            (Some(pr), Some(b)) => gauge_with_values(&f, pr, b, GaugeDirection::Apply),
            _ => Ok(f),
        }
    };

    let mut v: Vec<Complex64> = match (profiles, &b) {
        (Some(pr), Some(b)) => gauge_with_values(&config.initial, pr, b, GaugeDirection::Remove)?.into_values(),
        _ => config.initial.values().to_vec(),
    };
    let mut stepper = Stepper::new(&grid);
    let mut g_v = stepper.spectral().grad_norm_sq(&v).sqrt();
    let g0 = g_v;
    if !(config.g_max > g0) {
        return Err(LabError::InvalidParameter(format!("g_max {} must exceed the initial gradient norm {g0}", config.g_max)));
    }

    let x0 = physical(&v, &b)?;
    let mut traj = Trajectory {
        grid,
        p,
        snapshots: vec![Snapshot { t: config.t0, step: 0, field: x0.clone() }],
        diagnostics: vec![ctx.row(stepper.spectral(), &x0, config.t0)],
        driver_values: b.as_ref().map(|b| vec![b.clone()]),
        stop_reason: StopReason::ReachedEnd,
        gauged_grad_norm: vec![g_v],
    };

    let mut tick: u64 = 0;
    let mut next_output = 0usize;
    // newest state when it was not due for a snapshot
    let mut pending: Option<Snapshot> = None;
    let dx = grid.dx();
    loop {
        if tick >= end_tick {
            traj.stop_reason = StopReason::ReachedEnd;
            break;
        }
        let mut level = 0u32;
        if config.adaptive {
            let ratio = (g0 / g_v).powi(2).min(1.0);
            while ((1u64 << level) as f64).recip() > ratio {
                level += 1;
                if level > TICK_LEVELS {
                    break;
                }
            }
            if level > TICK_LEVELS {
                traj.stop_reason = StopReason::StepUnderflow;
                break;
            }
        }
        let per = 1u64 << (TICK_LEVELS - level);
        let mut step = per - tick % per;
        step = step.min(end_tick - tick);
        while next_output < outputs.len() && outputs[next_output] <= tick {
            next_output += 1;
        }
        if let Some(&o) = outputs.get(next_output) {
            step = step.min(o - tick);
        }
        let dt = step as f64 * tick_dt;
        let new_tick = tick + step;
        let t_new = t_of(new_tick);

        let mut trial = v.clone();
        let b_new = match (driver.as_mut(), profiles, &b) {
            (Some(d), Some(pr), Some(b_old)) => {
                let b_new = d.values_at(t_new, PATH_LOOKUP_LEVEL)?;
                let mid: Vec<f64> = b_old.iter().zip(&b_new).map(|(a, c)| 0.5 * (a + c)).collect();
                let coeffs = pr.coefficients(&mid);
                stepper.gnls(&mut trial, dt, p, &coeffs);
                Some(b_new)
            }
            _ => {
                stepper.strang(&mut trial, dt, p);
                None
            }
        };
        if !trial.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            traj.stop_reason = StopReason::NonFinite;
            break;
        }
        v = trial;
        b = b_new;
        tick = new_tick;
        g_v = stepper.spectral().grad_norm_sq(&v).sqrt();

        let x = physical(&v, &b)?;
        traj.diagnostics.push(ctx.row(stepper.spectral(), &x, t_new));
        traj.gauged_grad_norm.push(g_v);
        if let (Some(dv), Some(b)) = (traj.driver_values.as_mut(), &b) {
            dv.push(b.clone());
        }
        let k = traj.diagnostics.len() - 1;
        let at_output = outputs.get(next_output) == Some(&tick);
        let snap = Snapshot { t: t_new, step: k, field: x };
        if k % config.cadence == 0 || at_output || tick >= end_tick {
            traj.snapshots.push(snap);
            pending = None;
        } else {
            pending = Some(snap);
        }

        if g_v >= config.g_max {
            traj.stop_reason = StopReason::BlowupThreshold;
            break;
        }
        if q.grad_norm() / g_v < config.width_factor * dx {
            traj.stop_reason = StopReason::WidthUnderResolved;
            break;
        }
    }
    if let Some(s) = pending {
        traj.snapshots.push(s);
    }
    Ok(traj)
}

/// Fixed-step deterministic propagation over `span` in `steps` Strang steps.
pub fn evolve_fixed(v: &ComplexField, p: f64, span: f64, steps: usize) -> Result<ComplexField> {
    if steps == 0 || !(span >= 0.0) {
        return Err(LabError::InvalidParameter("need span ≥ 0 and at least one step".into()));
    }
    let mut st = Stepper::new(v.grid());
    let mut out = v.values().to_vec();
    let dt = span / steps as f64;
    if dt > 0.0 {
        for _ in 0..steps {
            st.strang(&mut out, dt, p);
        }
    }
    ComplexField::from_values(v.grid(), out).map_err(|_| LabError::NonFinite("fixed-step propagation".into()))
}

/// Solves NLS backward from `z(t_from) = z*` to `t_to < t_from` by time
/// reversal: conjugate, propagate forward, conjugate back.
pub fn backward_solve(z_star: &ComplexField, t_from: f64, t_to: f64, p: f64, dt: f64, smallness: f64) -> Result<ComplexField> {
    if !(t_from >= t_to) || !(dt > 0.0) {
        return Err(LabError::InvalidParameter("need t_to ≤ t_from and dt > 0".into()));
    }
    let q = QProfile::new(z_star.grid().dim(), p)?;
    let mut sp = Spectral::new(z_star.grid());
    let h1 = (z_star.norm_sq() + sp.grad_norm_sq(z_star.values())).sqrt();
    if h1 > smallness * q.h1_norm() {
        return Err(LabError::Precondition(format!(
            "||z*||_H1 = {h1:.4e} exceeds {smallness} ||Q||_H1 = {:.4e}",
            smallness * q.h1_norm()
        )));
    }
    let span = t_from - t_to;
    let steps = ((span / dt).ceil() as usize).max(1);
    Ok(evolve_fixed(&z_star.conj(), p, span, steps)?.conj())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{solitary_wave, BlowupParams, Soliton, SolitonParams};
    use crate::noise::{make_profiles, BrownianPath, ProfileKind};

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
    }

    #[test]
    fn plane_wave_is_exact() {
        let g = GridSpec::new(1, 2.0 * std::f64::consts::PI, 64).unwrap();
        let (amp, k, dt) = (0.7f64, 3.0f64, 0.01);
        let v = ComplexField::from_fn(&g, |x| Complex64::from_polar(amp, k * x[0]));
        for p in [3.0, 5.0] {
            let out = step_strang(&v, dt, p).unwrap();
            let expect = ComplexField::from_fn(&g, |x| {
                Complex64::from_polar(amp, k * x[0] + (amp.powf(p - 1.0) - k * k) * dt)
            });
            assert!(max_diff(out.values(), expect.values()) < 1e-13);
        }
    }

    #[test]
    fn strang_conserves_mass() {
        let g = GridSpec::new(1, 40.0, 512).unwrap();
        let v = ComplexField::from_fn(&g, |x| Complex64::new(1.5 * (-x[0] * x[0]).exp(), 0.2 * x[0] * (-x[0] * x[0]).exp()));
        let out = step_strang(&v, 1e-2, 5.0).unwrap();
        assert!((out.norm_sq() - v.norm_sq()).abs() < 1e-14 * v.norm_sq());
    }

    #[test]
    fn zero_coefficients_reduce_to_strang() {
        let g = GridSpec::new(1, 40.0, 256).unwrap();
        let v = ComplexField::from_real(&g, |x| (-x[0] * x[0]).exp());
        let prof = make_profiles(ProfileKind::Constant, 0.4, &[], &g).unwrap();
        let c = prof.coefficients(&[0.9]);
        let a = step_gnls(&v, 1e-3, 5.0, &c).unwrap();
        let b = step_strang(&v, 1e-3, 5.0).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn soliton_local_error_is_third_order() {
        let g = GridSpec::new(1, 40.0, 1024).unwrap();
        let q = QProfile::critical(1).unwrap();
        let params = SolitonParams { solitons: vec![Soliton { c: [1.0, 0.0], w: 1.0, theta: 0.0, x0: [0.0; 2] }], p: 5.0 };
        let w0 = solitary_wave(&params, 0.0, &g, &q).unwrap();
        let err = |dt: f64| {
            let out = step_strang(&w0, dt, 5.0).unwrap();
            out.sub(&solitary_wave(&params, dt, &g, &q).unwrap()).unwrap().l2_norm()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 8.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn time_reversal_round_trip() {
        let g = GridSpec::new(1, 40.0, 512).unwrap();
        let z = ComplexField::from_real(&g, |x| 0.05 * (-x[0] * x[0]).exp());
        let back = backward_solve(&z, 1.0, 0.0, 5.0, 1e-3, 0.1).unwrap();
        let fwd = evolve_fixed(&back, 5.0, 1.0, 1000).unwrap();
        assert!(max_diff(fwd.values(), z.values()) < 1e-8);
        let zero = ComplexField::zeros(&g);
        assert_eq!(backward_solve(&zero, 1.0, 0.0, 5.0, 1e-3, 0.1).unwrap().max_abs(), 0.0);
        let big = z.scale(Complex64::new(20.0, 0.0));
        assert!(matches!(backward_solve(&big, 1.0, 0.0, 5.0, 1e-3, 0.1), Err(LabError::Precondition(_))));
    }

    #[test]
    fn integrate_soliton_short() {
        let g = GridSpec::new(1, 40.0, 512).unwrap();
        let q = QProfile::critical(1).unwrap();
        let params = SolitonParams { solitons: vec![Soliton { c: [0.5, 0.0], w: 1.0, theta: 0.0, x0: [0.0; 2] }], p: 5.0 };
        let w0 = solitary_wave(&params, 0.0, &g, &q).unwrap();
        let mut cfg = EvolveConfig::new(w0, 5.0, 0.5, 1e-3);
        cfg.reference = Some(Reference { params: ProfileParams::Solitons(params), q });
        cfg.cadence = 100;
        cfg.output_times = vec![0.25];
        let traj = integrate(&cfg).unwrap();
        assert_eq!(traj.stop_reason, StopReason::ReachedEnd);
        assert!((traj.final_time() - 0.5).abs() < 1e-12);
        assert!(traj.snapshot_at(0.25).is_some());
        assert_eq!(traj.last_snapshot().step, traj.steps());
        assert!(traj.mass_drift() < 1e-12);
        assert!(traj.diagnostics.last().unwrap().residual < 1e-5);
        let again = integrate(&cfg).unwrap();
        assert_eq!(traj.diagnostics, again.diagnostics);
    }

    #[test]
    fn blowup_run_stops_on_width() {
        let g = GridSpec::new(1, 32.0, 2048).unwrap();
        let q = QProfile::critical(1).unwrap();
        let s0 = crate::exact::pseudo_conformal_blowup(&BlowupParams::single(1.0, 1.0), 0.0, &g, &q).unwrap();
        let mut cfg = EvolveConfig::new(s0, 5.0, 2.0, 2e-3);
        cfg.cadence = 1000;
        let traj = integrate(&cfg).unwrap();
        assert_eq!(traj.stop_reason, StopReason::WidthUnderResolved);
        let t_est = traj.estimate_blowup_time().unwrap();
        assert!((t_est - 1.0).abs() < 0.02, "T_est {t_est}");
        assert!(traj.final_time() < 1.0);
    }

    #[test]
    fn gnls_mass_drift_with_schwartz_noise() {
        let g = GridSpec::new(1, 40.0, 512).unwrap();
        let v0 = ComplexField::from_real(&g, |x| (-x[0] * x[0]).exp());
        let prof = make_profiles(ProfileKind::Schwartz { sigma: 2.0 }, 0.5, &[], &g).unwrap();
        let path = BrownianPath::uniform(5, 0.0, 1e-3, 500, 1).unwrap();
        let mut cfg = EvolveConfig::new(v0, 5.0, 0.5, 1e-3);
        cfg.noise = Some(NoiseSetup { profiles: prof, driver: Driver::Brownian(path) });
        let traj = integrate(&cfg).unwrap();
        assert!(traj.mass_drift() < 1e-10, "drift {}", traj.mass_drift());
        assert_eq!(traj.increments().unwrap().len(), traj.steps());
    }

    #[test]
    fn config_rejections() {
        let g = GridSpec::new(1, 40.0, 256).unwrap();
        let v0 = ComplexField::from_real(&g, |x| (-x[0] * x[0]).exp());
        let mut cfg = EvolveConfig::new(v0, 5.0, 1.0, 1e-3);
        cfg.g_max = 0.1;
        assert!(integrate(&cfg).is_err());
        cfg.g_max = f64::INFINITY;
        cfg.dt0 = 0.0;
        assert!(integrate(&cfg).is_err());
    }

    #[test]
    fn blowup_time_extrapolation_is_exact_for_inverse_law() {
        let t: Vec<f64> = (0..100).map(|i| 0.99 * i as f64 / 99.0).collect();
        let g: Vec<f64> = t.iter().map(|s| 3.0 / (1.0 - s)).collect();
        assert!((estimate_blowup_time(&t, &g).unwrap() - 1.0).abs() < 1e-10);
        let flat = vec![1.0; 100];
        assert!(estimate_blowup_time(&t, &flat).is_none());
    }
}
