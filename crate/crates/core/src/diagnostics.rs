//! Conserved functionals, inequalities and identities as checkable numbers,
//! plus modulation and blow-up-rate fits.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::evolution::Trajectory;
use crate::exact::ProfileParams;
use crate::grid::{radius, ComplexField, FourierInterpolator, GridSpec, OutsideBox, Spectral};
use crate::ground_state::QProfile;
use crate::noise::NoiseProfileSet;
use crate::Complex64;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Functionals {
    /// `||v||_{L^2}`.
    pub mass: f64,
    pub hamiltonian: f64,
    pub grad_norm: f64,
    pub sigma_norm: f64,
}

/// `½||∇v||² - 1/(p+1) ∫|v|^{p+1}`; the critical case is `d/(2d+4)`.
pub fn hamiltonian(v: &ComplexField, p: f64) -> f64 {
    let mut sp = Spectral::new(v.grid());
    0.5 * sp.grad_norm_sq(v.values()) - v.lq_integral(p + 1.0) / (p + 1.0)
}

/// Mass, critical Hamiltonian, gradient norm and Σ norm.
pub fn functionals(v: &ComplexField) -> Functionals {
    let d = v.grid().dim() as f64;
    let mut sp = Spectral::new(v.grid());
    let grad_sq = sp.grad_norm_sq(v.values());
    let mass_sq = v.norm_sq();
    let moment: f64 = v
        .values()
        .iter()
        .zip(v.grid().positions())
        .map(|(z, x)| radius(x, v.grid().dim()).powi(2) * z.norm_sqr())
        .sum::<f64>()
        * v.grid().cell_volume();
    Functionals {
        mass: mass_sq.sqrt(),
        hamiltonian: 0.5 * grad_sq - d / (2.0 * d + 4.0) * v.lq_integral(2.0 + 4.0 / d),
        grad_norm: grad_sq.sqrt(),
        sigma_norm: (mass_sq + grad_sq + moment).sqrt(),
    }
}

/// `H(v) - ½(1 - (||v||/||Q||)^{4/d}) ||∇v||²`, nonnegative by sharp Gagliardo–Nirenberg.
pub fn hgn_slack(v: &ComplexField, q_mass: f64) -> f64 {
    let f = functionals(v);
    let d = v.grid().dim() as f64;
    f.hamiltonian - 0.5 * (1.0 - (f.mass * f.mass / q_mass).powf(2.0 / d)) * f.grad_norm * f.grad_norm
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BanicaReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

pub const BANICA_SLACK: f64 = 1e-10;

/// `|Im ∫ v ∇v̄·∇φ| ≤ (2 H(v) ∫|v ∇φ|²)^{1/2}` for `||v|| ≤ ||Q||`.
pub fn banica_check(v: &ComplexField, grad_phi: &[[f64; 2]], q_mass: f64) -> Result<BanicaReport> {
    if grad_phi.len() != v.values().len() {
        return Err(LabError::GridMismatch);
    }
    let mass = v.l2_norm();
    if mass > q_mass.sqrt() + 1e-8 {
        return Err(LabError::Precondition(format!(
            "mass {mass:.10} exceeds ||Q|| = {:.10}",
            q_mass.sqrt()
        )));
    }
    let mut sp = Spectral::new(v.grid());
    let d = v.grid().dim();
    let grad = sp.gradient(v.values());
    let vol = v.grid().cell_volume();
    let mut pairing = 0.0;
    let mut weight = 0.0;
    for (n, z) in v.values().iter().enumerate() {
        let gp = grad_phi[n];
        for c in 0..d {
            pairing += (z * grad[c][n].conj()).im * gp[c];
        }
        weight += z.norm_sqr() * (gp[0] * gp[0] + gp[1] * gp[1]);
    }
    let h = functionals(v).hamiltonian;
    let lhs = (pairing * vol).abs();
    let rhs = (2.0 * h.max(0.0) * weight * vol).sqrt();
    Ok(BanicaReport { lhs, rhs, satisfied: lhs <= rhs + BANICA_SLACK })
}

/// Every profile of a set checked against one field.
pub fn banica_check_all(v: &ComplexField, profiles: &NoiseProfileSet, q_mass: f64) -> Result<Vec<BanicaReport>> {
    (0..profiles.modes()).map(|l| banica_check(v, profiles.grad(l), q_mass)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct HamiltonianSeries {
    pub t: Vec<f64>,
    pub hamiltonian: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub residual: Vec<f64>,
}

impl HamiltonianSeries {
    pub fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Residual of `H(X(t)) = H(X₀) + H₁(t) + H₂(t)` with
/// `H₁ = ½ Σ∫ ||∇φ_l X||² ds` (trapezoid) and
/// `H₂ = -Σ∫ Im⟨∇φ_l X, ∇X⟩ dB_l` (left-point sums). Requires a snapshot at
/// every accepted step.
pub fn hamiltonian_evolution_residual(traj: &Trajectory, profiles: &NoiseProfileSet) -> Result<HamiltonianSeries> {
    let inc = traj
        .increments()
        .ok_or_else(|| LabError::InsufficientData("trajectory carries no Brownian increments".into()))?;
    if traj.snapshots.len() != traj.diagnostics.len() || traj.snapshots.iter().enumerate().any(|(k, s)| s.step != k) {
        return Err(LabError::InsufficientData("identity needs a snapshot at every step".into()));
    }
    if inc.first().map(|r| r.len()).unwrap_or(profiles.modes()) != profiles.modes() {
        return Err(LabError::InvalidParameter("increment and profile mode counts differ".into()));
    }
    let grid = traj.grid;
    let d = grid.dim();
    let vol = grid.cell_volume();
    let mut sp = Spectral::new(&grid);
    let modes = profiles.modes();
    // per snapshot: H, Σ_l ½∫|∇φ_l|²|X|², and Im⟨∇φ_l X, ∇X⟩ for each l
    let mut h = Vec::new();
    let mut density = Vec::new();
    let mut pair = Vec::new();
    for s in &traj.snapshots {
        let x = s.field.values();
        let grad = sp.gradient(x);
        let grad_sq: f64 = grad.iter().flat_map(|g| g.iter().map(|z| z.norm_sqr())).sum::<f64>() * vol;
        h.push(0.5 * grad_sq - s.field.lq_integral(traj.p + 1.0) / (traj.p + 1.0));
        let mut dens = 0.0;
        let mut row = vec![0.0; modes];
        for l in 0..modes {
            let gp = profiles.grad(l);
            let mut acc = 0.0;
            let mut pr = 0.0;
            for n in 0..x.len() {
                let w = gp[n][0] * gp[n][0] + gp[n][1] * gp[n][1];
                acc += w * x[n].norm_sqr();
                for c in 0..d {
                    pr += gp[n][c] * (x[n] * grad[c][n].conj()).im;
                }
            }
            dens += 0.5 * acc * vol;
            row[l] = pr * vol;
        }
        density.push(dens);
        pair.push(row);
    }
    let t = traj.times();
    let mut out = HamiltonianSeries { t: t.clone(), hamiltonian: h.clone(), h1: vec![0.0], h2: vec![0.0], residual: vec![0.0] };
    for k in 1..t.len() {
        let dt = t[k] - t[k - 1];
        let h1 = out.h1[k - 1] + 0.5 * dt * (density[k] + density[k - 1]);
        let h2 = out.h2[k - 1] - (0..modes).map(|l| pair[k - 1][l] * inc[k - 1][l]).sum::<f64>();
        out.h1.push(h1);
        out.h2.push(h2);
        out.residual.push(h[k] - h[0] - h1 - h2);
    }
    Ok(out)
}

/// Radial cutoff `θ(r) = r²` on `[0,1]`, blended to zero on `[1,3]`, and
/// its rescaling `θ_m(x) = m² θ(|x|/m)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffSpec {
    pub m: f64,
    /// Measured `sup |θ'|²/θ`.
    pub c_const: f64,
}

fn bump(u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp()
    } else {
        0.0
    }
}

fn dbump(u: f64) -> f64 {
    if u > 0.0 {
        bump(u) / (u * u)
    } else {
        0.0
    }
}

/// Complement `1 - ψ` of a smooth step ψ from 0 (u ≤ 0) to 1 (u ≥ 1), and `ψ'`.
/// The complement is formed directly so it keeps full relative precision
/// where ψ is within an ulp of 1.
fn smoothstep_complement(u: f64) -> (f64, f64) {
    let (a, b) = (bump(u), bump(1.0 - u));
    if a + b == 0.0 {
        return (if u >= 1.0 { 0.0 } else { 1.0 }, 0.0);
    }
    let s = a + b;
    (b / s, (dbump(u) * b + a * dbump(1.0 - u)) / (s * s))
}

/// `(θ(r), θ'(r))`.
pub fn theta(r: f64) -> (f64, f64) {
    if r <= 1.0 {
        (r * r, 2.0 * r)
    } else if r >= 3.0 {
        (0.0, 0.0)
    } else {
        let u = 0.5 * (r - 1.0);
        let (rest, dpsi) = smoothstep_complement(u);
        (r * r * rest, 2.0 * r * rest - 0.5 * r * r * dpsi)
    }
}

impl CutoffSpec {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(LabError::InvalidParameter("cutoff scale must be positive".into()));
        }
        let mut c: f64 = 0.0;
        let n = 30_000;
        for i in 1..n {
            let r = 3.0 * i as f64 / n as f64;
            let (th, dth) = theta(r);
            if th > 1e-300 {
                c = c.max(dth * dth / th);
            }
        }
        Ok(Self { m, c_const: c })
    }

    /// `(θ_m(x), ∇θ_m(x))` for displacement `x`.
    pub fn eval(&self, x: [f64; 2], dim: usize) -> (f64, [f64; 2]) {
        let r = radius(x, dim);
        let (th, dth) = theta(r / self.m);
        let g = if r > 0.0 { self.m * dth / r } else { 0.0 };
        (self.m * self.m * th, [g * x[0], if dim == 2 { g * x[1] } else { 0.0 }])
    }
}

fn displacement(x: [f64; 2], center: [f64; 2], dim: usize) -> [f64; 2] {
    [x[0] - center[0], if dim == 2 { x[1] - center[1] } else { 0.0 }]
}

/// Weight and weight gradient of the virial about `center`.
fn virial_weight(x: [f64; 2], center: [f64; 2], dim: usize, cutoff: Option<&CutoffSpec>) -> (f64, [f64; 2]) {
    let y = displacement(x, center, dim);
    match cutoff {
        Some(c) => c.eval(y, dim),
        None => (y[0] * y[0] + y[1] * y[1], [2.0 * y[0], 2.0 * y[1]]),
    }
}

/// `∫ θ_m(x - c)|v|²`, or `∫ |x - c|²|v|²` without cutoff.
pub fn virial(v: &ComplexField, center: [f64; 2], cutoff: Option<&CutoffSpec>) -> f64 {
    let d = v.grid().dim();
    v.values()
        .iter()
        .zip(v.grid().positions())
        .map(|(z, x)| virial_weight(x, center, d, cutoff).0 * z.norm_sqr())
        .sum::<f64>()
        * v.grid().cell_volume()
}

/// `-2 Im⟨∇θ X, ∇X⟩ = 2 Im ∫ ∇θ · X̄ ∇X`, the virial drift.
pub fn virial_drift(v: &ComplexField, center: [f64; 2], cutoff: Option<&CutoffSpec>, sp: &mut Spectral) -> f64 {
    let d = v.grid().dim();
    let grad = sp.gradient(v.values());
    let mut acc = 0.0;
    for (n, (z, x)) in v.values().iter().zip(v.grid().positions()).enumerate() {
        let (_, gw) = virial_weight(x, center, d, cutoff);
        for c in 0..d {
            acc += gw[c] * (z.conj() * grad[c][n]).im;
        }
    }
    2.0 * acc * v.grid().cell_volume()
}

#[derive(Debug, Clone, Serialize)]
pub struct VirialSeries {
    pub t: Vec<f64>,
    pub direct: Vec<f64>,
    pub integrated: Vec<f64>,
    pub residual: Vec<f64>,
}

impl VirialSeries {
    pub fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Direct `V_m(t)` against `V_m(0)` plus the trapezoidal integral of the drift over snapshots.
pub fn virial_evolution_residual(traj: &Trajectory, center: [f64; 2], cutoff: Option<&CutoffSpec>) -> Result<VirialSeries> {
    if traj.snapshots.len() < 2 {
        return Err(LabError::InsufficientData("need at least two snapshots".into()));
    }
    let mut sp = Spectral::new(&traj.grid);
    let t: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    let direct: Vec<f64> = traj.snapshots.iter().map(|s| virial(&s.field, center, cutoff)).collect();
    let drift: Vec<f64> = traj.snapshots.iter().map(|s| virial_drift(&s.field, center, cutoff, &mut sp)).collect();
    let mut integrated = vec![direct[0]];
    for k in 1..t.len() {
        integrated.push(integrated[k - 1] + 0.5 * (t[k] - t[k - 1]) * (drift[k] + drift[k - 1]));
    }
    let residual = direct.iter().zip(&integrated).map(|(a, b)| a - b).collect();
    Ok(VirialSeries { t, direct, integrated, residual })
}

/// `∫_{|x-c| ≤ R} |v|²`.
pub fn localized_mass(v: &ComplexField, center: [f64; 2], r: f64) -> f64 {
    let d = v.grid().dim();
    v.values()
        .iter()
        .zip(v.grid().positions())
        .filter(|(_, x)| radius(displacement(*x, center, d), d) <= r)
        .map(|(z, _)| z.norm_sqr())
        .sum::<f64>()
        * v.grid().cell_volume()
}

fn argmax_abs(v: &ComplexField) -> usize {
    let mut best = 0;
    let mut val = -1.0;
    for (i, z) in v.values().iter().enumerate() {
        let s = z.norm_sqr();
        if s > val {
            val = s;
            best = i;
        }
    }
    best
}

/// Peak of `|v|²` refined by a three-point parabola along each axis.
pub fn peak_center(v: &ComplexField) -> [f64; 2] {
    let g = v.grid();
    let n = g.points();
    let idx = argmax_abs(v);
    let mut x = g.position(idx);
    let at = |i: usize| v.values()[i].norm_sqr();
    let (row, col) = if g.dim() == 1 { (idx, 0) } else { (idx / n, idx % n) };
    for axis in 0..g.dim() {
        let (im, ip) = match (g.dim(), axis) {
            (1, _) => ((idx + n - 1) % n, (idx + 1) % n),
            (_, 0) => (((row + n - 1) % n) * n + col, ((row + 1) % n) * n + col),
            _ => (row * n + (col + n - 1) % n, row * n + (col + 1) % n),
        };
        let (fm, f0, fp) = (at(im), at(idx), at(ip));
        let denom = fm - 2.0 * f0 + fp;
        if denom < 0.0 {
            x[axis] += 0.5 * g.dx() * (fm - fp) / denom;
        }
    }
    x
}

/// Strict local maxima of `|v|` in decreasing order.
fn local_maxima(v: &ComplexField) -> Vec<f64> {
    let g = v.grid();
    let n = g.points();
    let m = v.modulus();
    let mut peaks = Vec::new();
    for i in 0..g.len() {
        let neighbors: Vec<usize> = if g.dim() == 1 {
            vec![(i + n - 1) % n, (i + 1) % n]
        } else {
            let (r, c) = (i / n, i % n);
            vec![((r + n - 1) % n) * n + c, ((r + 1) % n) * n + c, r * n + (c + n - 1) % n, r * n + (c + 1) % n]
        };
        if neighbors.iter().all(|&j| m[i] > m[j]) {
            peaks.push(m[i]);
        }
    }
    peaks.sort_by(|a, b| b.partial_cmp(a).unwrap());
    peaks
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModulationFit {
    pub lambda: f64,
    pub center: [f64; 2],
    pub gamma: f64,
    pub residual_l2: f64,
    pub residual_h1: f64,
    /// Second-highest local maximum exceeds half the peak.
    pub multi_humped: bool,
}

/// Newton iterations on `∇|v|² = 0` using the Fourier interpolant.
fn polish_center(interp: &FourierInterpolator, start: [f64; 2], dim: usize, dx: f64) -> [f64; 2] {
    let mut x = start;
    for _ in 0..8 {
        let (val, grad, hess) = interp.eval_point(x);
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for a in 0..dim {
            g[a] = 2.0 * (val.conj() * grad[a]).re;
            for b in 0..dim {
                h[a][b] = 2.0 * (grad[a].conj() * grad[b] + val.conj() * hess[a][b]).re;
            }
        }
        let step = if dim == 1 {
            if h[0][0] >= 0.0 {
                break;
            }
            [g[0] / h[0][0], 0.0]
        } else {
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if !(h[0][0] < 0.0 && det > 0.0) {
                break;
            }
            [(h[1][1] * g[0] - h[0][1] * g[1]) / det, (h[0][0] * g[1] - h[1][0] * g[0]) / det]
        };
        if step[0].abs() > dx || step[1].abs() > dx {
            break;
        }
        x = [x[0] - step[0], x[1] - step[1]];
        if step[0].abs().max(step[1].abs()) < 1e-14 {
            break;
        }
    }
    x
}

/// Fits `v ≈ λ^{-d/2} Q((x - y)/λ) e^{iγ}` and measures the remainder.
pub fn modulation_fit(v: &ComplexField, q: &QProfile) -> Result<ModulationFit> {
    let grid = *v.grid();
    let d = grid.dim();
    let mut sp = Spectral::new(&grid);
    let grad_norm = sp.grad_norm_sq(v.values()).sqrt();
    if v.max_abs() == 0.0 || grad_norm == 0.0 {
        return Err(LabError::InvalidParameter("cannot fit a vanishing field".into()));
    }
    let lambda = q.grad_norm() / grad_norm;
    let interp = FourierInterpolator::new(v);
    let center = polish_center(&interp, peak_center(v), d, grid.dx());

    let coords = grid.coords();
    let axes: Vec<Vec<f64>> = (0..d).map(|a| coords.iter().map(|x| lambda * x + center[a]).collect()).collect();
    let scale = lambda.powf(0.5 * d as f64);
    let rescaled: Vec<Complex64> = interp.eval_tensor(&axes, OutsideBox::Zero).into_iter().map(|z| z * scale).collect();
    let qf = q.sample(&grid, [0.0, 0.0]);
    let overlap: Complex64 = rescaled.iter().zip(qf.values()).map(|(a, b)| a * b.re).sum();
    let gamma = overlap.arg();
    let rot = Complex64::from_polar(1.0, -gamma);
    let eps: Vec<Complex64> = rescaled.iter().zip(qf.values()).map(|(a, b)| a * rot - b).collect();
    let vol = grid.cell_volume();
    let l2_sq = eps.iter().map(|z| z.norm_sqr()).sum::<f64>() * vol;
    let h1_sq = l2_sq + sp.grad_norm_sq(&eps);
    let peaks = local_maxima(v);
    let multi_humped = peaks.len() > 1 && peaks[1] > 0.5 * peaks[0];
    Ok(ModulationFit { lambda, center, gamma, residual_l2: l2_sq.sqrt(), residual_h1: h1_sq.sqrt(), multi_humped })
}

/// `λ^{-d/2} Q((x - y)/λ) e^{iγ}` on the grid.
pub fn reconstruct(fit: &ModulationFit, q: &QProfile, grid: &GridSpec) -> ComplexField {
    let d = grid.dim();
    let amp = fit.lambda.powf(-0.5 * d as f64);
    ComplexField::from_fn(grid, |x| {
        let r = radius(displacement(x, fit.center, d), d);
        Complex64::from_polar(amp * q.value(r / fit.lambda), fit.gamma)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateLaw {
    PseudoConformal,
    LogLog,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    /// Blow-up time of the preferred model.
    pub t_est: f64,
    /// Exponent of the preferred model.
    pub alpha: f64,
    pub alpha_plain: f64,
    pub alpha_loglog: f64,
    pub log_c: f64,
    pub rss: f64,
    /// `(RSS_plain - RSS_loglog) / (RSS_plain + RSS_loglog)`.
    pub loglog_score: f64,
    pub t_est_plain: f64,
    pub t_est_loglog: f64,
    pub law: RateLaw,
}

/// `½ ln ln(1/τ)`, clamped to zero where `τ ≥ 1/e`.
fn loglog_term(tau: f64) -> f64 {
    0.5 * (-tau.ln()).max(1.0).ln()
}

/// Least squares of `ln g = a + α(-ln(T - t)) [+ ½ ln ln(1/(T-t))]` for fixed `T`.
fn fixed_t_fit(t: &[f64], lg: &[f64], t_e: f64, loglog: bool) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let xs: Vec<f64> = t.iter().map(|s| -(t_e - s).ln()).collect();
    let ys: Vec<f64> = lg
        .iter()
        .zip(t)
        .map(|(y, s)| if loglog { y - loglog_term(t_e - s) } else { *y })
        .collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let a = my - alpha * mx;
    let rss = xs.iter().zip(&ys).map(|(x, y)| (y - a - alpha * x).powi(2)).sum();
    (a, alpha, rss)
}

/// Minimizes the fixed-`T` residual over `T > t_last` by a log-spaced scan
/// followed by golden-section refinement in `ln(T - t_last)`.
fn joint_fit(t: &[f64], lg: &[f64], loglog: bool) -> (f64, f64, f64, f64) {
    let t_last = *t.last().unwrap();
    let span = t_last - t[0];
    let (lo, hi) = ((1e-12 * span).ln(), (100.0 * span).ln());
    let n = 240;
    let at = |s: f64| fixed_t_fit(t, lg, t_last + s.exp(), loglog).2;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&s| at(s)).collect();
    let best = (0..=n).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (at(c), at(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = at(d);
        }
    }
    let mut s = 0.5 * (a + b);
    if vals[best] < at(s) {
        s = grid[best];
    }
    let t_e = t_last + s.exp();
    let (log_c, alpha, rss) = fixed_t_fit(t, lg, t_e, loglog);
    (t_e, alpha, log_c, rss)
}

/// Joint fit of `g ≈ C (T - t)^{-α}`; the log-log score compares against the
/// same law with the extra `√(ln ln(1/(T-t)))` factor, and the reported
/// exponent and time come from whichever model fits better.
pub fn blowup_rate_fit(t: &[f64], g: &[f64]) -> Result<RateFit> {
    if t.len() != g.len() || t.len() < 20 {
        return Err(LabError::InsufficientData(format!("{} samples, need ≥ 20", t.len().min(g.len()))));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|x| !(*x > 0.0)) {
        return Err(LabError::InvalidParameter("times must increase and norms must be positive".into()));
    }
    let (gmin, gmax) = g.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    if gmax < 10.0 * gmin {
        return Err(LabError::InsufficientData(format!("dynamic range {:.2} < one decade", gmax / gmin)));
    }
    let lg: Vec<f64> = g.iter().map(|x| x.ln()).collect();
    let (t_pl, a_pl, c_pl, rss) = joint_fit(t, &lg, false);
    let (t_ll, a_ll, c_ll, rss_ll) = joint_fit(t, &lg, true);
    let denom = rss + rss_ll;
    let loglog_score = if denom > 1e-300 { (rss - rss_ll) / denom } else { 0.0 };
    let prefer_ll = loglog_score > 0.0;
    let law = if prefer_ll && a_ll < 0.75 { RateLaw::LogLog } else { RateLaw::PseudoConformal };
    let (t_est, alpha, log_c) = if prefer_ll { (t_ll, a_ll, c_ll) } else { (t_pl, a_pl, c_pl) };
    Ok(RateFit {
        t_est,
        alpha,
        alpha_plain: a_pl,
        alpha_loglog: a_ll,
        log_c,
        rss,
        loglog_score,
        t_est_plain: t_pl,
        t_est_loglog: t_ll,
        law,
    })
}

/// Samples of `(t, g)` over the last decade of growth of `g`: from the last
/// sample at or below a tenth of the final value onward. The whole series
/// when it never grew that much.
pub fn last_decade(t: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let g_last = g.last().copied().unwrap_or(0.0);
    let start = g.iter().rposition(|&x| x <= 0.1 * g_last).unwrap_or(0);
    (t[start..].to_vec(), g[start..].to_vec())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ComponentResidual {
    pub center: [f64; 2],
    pub window: f64,
    pub l2: f64,
    pub h1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileResiduals {
    pub l2: f64,
    pub h1: f64,
    pub sigma: f64,
    pub components: Vec<ComponentResidual>,
}

/// Norms of `v - Σ_k profile_k(t) - z`, globally and in balls of radius
/// half the minimal separation around each component.
pub fn profile_residuals(
    v: &ComplexField,
    t: f64,
    params: &ProfileParams,
    q: &QProfile,
    z: Option<&ComplexField>,
) -> Result<ProfileResiduals> {
    let grid = *v.grid();
    let d = grid.dim();
    let mut diff = v.sub(&params.evaluate(t, &grid, q)?)?;
    if let Some(z) = z {
        diff = diff.sub(z)?;
    }
    let mut sp = Spectral::new(&grid);
    let grad = sp.gradient(diff.values());
    let vol = grid.cell_volume();
    let dens: Vec<(f64, f64)> = (0..diff.values().len())
        .map(|n| (diff.values()[n].norm_sqr(), grad.iter().map(|g| g[n].norm_sqr()).sum()))
        .collect();
    let l2_sq: f64 = dens.iter().map(|x| x.0).sum::<f64>() * vol;
    let g_sq: f64 = dens.iter().map(|x| x.1).sum::<f64>() * vol;
    let moment: f64 = dens.iter().zip(grid.positions()).map(|(x, p)| radius(p, d).powi(2) * x.0).sum::<f64>() * vol;

    let centers = params.centers(t);
    let mut sep = f64::INFINITY;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[..i] {
            sep = sep.min(radius(displacement(*a, *b, d), d));
        }
    }
    let window = 0.5 * sep;
    let components = centers
        .iter()
        .map(|c| {
            let (mut a, mut b) = (0.0, 0.0);
            for (x, p) in dens.iter().zip(grid.positions()) {
                if radius(displacement(p, *c, d), d) <= window {
                    a += x.0;
                    b += x.1;
                }
            }
            ComponentResidual { center: *c, window, l2: (a * vol).sqrt(), h1: ((a + b) * vol).sqrt() }
        })
        .collect();
    Ok(ProfileResiduals {
        l2: l2_sq.sqrt(),
        h1: (l2_sq + g_sq).sqrt(),
        sigma: (l2_sq + g_sq + moment).sqrt(),
        components,
    })
}
