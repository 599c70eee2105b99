//! Spatial noise profiles, seeded Brownian paths with bridge refinement, the
//! gauge `v = e^{-W} X` and the lower-order coefficients it produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;

use crate::error::{LabError, Result};
use crate::grid::{radius, ComplexField, GridSpec};
use crate::Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    Constant,
    /// `A e^{-|x-x_c|²/σ²}`.
    Schwartz { sigma: f64 },
    /// `A Π_k |x-x_k|⁶ e^{-|x-x_k|²}`, flat through order 5 at every `x_k`.
    Flat,
}

impl ProfileKind {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Schwartz { .. } => "schwartz",
            Self::Flat => "flat",
        }
    }
}

/// Value, gradient and Laplacian of a profile at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub lap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile {
    pub kind: ProfileKind,
    pub amplitude: f64,
    pub dim: usize,
    /// Schwartz center.
    pub center: [f64; 2],
    pub flat_points: Vec<[f64; 2]>,
    /// Highest derivative order that vanishes at every flat point.
    pub flat_order: usize,
}

/// `g(y) = |y|⁶ e^{-|y|²}` with its gradient and Laplacian.
fn flat_factor(y: [f64; 2], dim: usize) -> Jet {
    let s = y[0] * y[0] + if dim == 2 { y[1] * y[1] } else { 0.0 };
    let e = (-s).exp();
    let h = s * s * (3.0 - s) * e;
    let dh = (6.0 * s - 6.0 * s * s + s * s * s) * e;
    Jet {
        value: s * s * s * e,
        grad: [2.0 * y[0] * h, if dim == 2 { 2.0 * y[1] * h } else { 0.0 }],
        lap: 2.0 * dim as f64 * h + 4.0 * s * dh,
    }
}

impl NoiseProfile {
    pub fn eval(&self, x: [f64; 2]) -> Jet {
        let d = self.dim;
        let a = self.amplitude;
        match self.kind {
            ProfileKind::Constant => Jet { value: a, ..Jet::default() },
            ProfileKind::Schwartz { sigma } => {
                let y = [x[0] - self.center[0], if d == 2 { x[1] - self.center[1] } else { 0.0 }];
                let s2 = sigma * sigma;
                let r2 = y[0] * y[0] + y[1] * y[1];
                let v = a * (-r2 / s2).exp();
                Jet {
                    value: v,
                    grad: [-2.0 * y[0] / s2 * v, -2.0 * y[1] / s2 * v],
                    lap: (4.0 * r2 / (s2 * s2) - 2.0 * d as f64 / s2) * v,
                }
            }
            ProfileKind::Flat => {
                let factors: Vec<Jet> = self
                    .flat_points
                    .iter()
                    .map(|p| flat_factor([x[0] - p[0], x[1] - p[1]], d))
                    .collect();
                let n = factors.len();
                let others = |skip: &[usize]| -> f64 {
                    (0..n).filter(|j| !skip.contains(j)).map(|j| factors[j].value).product()
                };
                let mut out = Jet { value: a * others(&[]), ..Jet::default() };
                for k in 0..n {
                    let rest = others(&[k]);
                    for c in 0..2 {
                        out.grad[c] += a * factors[k].grad[c] * rest;
                    }
                    out.lap += a * factors[k].lap * rest;
                    for m in 0..n {
                        if m != k {
                            let dotg = factors[k].grad[0] * factors[m].grad[0]
                                + factors[k].grad[1] * factors[m].grad[1];
                            out.lap += a * dotg * others(&[k, m]);
                        }
                    }
                }
                out
            }
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.eval(x).value
    }
}

/// Sampled profiles `φ_l` with analytic gradients and Laplacians.
#[derive(Debug, Clone)]
pub struct NoiseProfileSet {
    grid: GridSpec,
    profiles: Vec<NoiseProfile>,
    phi: Vec<Vec<f64>>,
    grad: Vec<Vec<[f64; 2]>>,
    lap: Vec<Vec<f64>>,
}

pub const MAX_MODES: usize = 8;

/// Single-mode profile set of the given kind.
pub fn make_profiles(
    kind: ProfileKind,
    amplitude: f64,
    flat_points: &[[f64; 2]],
    grid: &GridSpec,
) -> Result<NoiseProfileSet> {
    let profile = NoiseProfile {
        kind,
        amplitude,
        dim: grid.dim(),
        center: [0.0; 2],
        flat_points: flat_points.to_vec(),
        flat_order: 5,
    };
    NoiseProfileSet::new(grid, vec![profile])
}

impl NoiseProfileSet {
    pub fn new(grid: &GridSpec, profiles: Vec<NoiseProfile>) -> Result<Self> {
        if profiles.len() > MAX_MODES {
            return Err(LabError::InvalidParameter(format!("at most {MAX_MODES} noise modes")));
        }
        for p in &profiles {
            if !(p.amplitude >= 0.0) || !p.amplitude.is_finite() {
                return Err(LabError::InvalidParameter("noise amplitude must be finite and nonnegative".into()));
            }
            if p.dim != grid.dim() {
                return Err(LabError::InvalidParameter("profile dimension differs from grid".into()));
            }
            match p.kind {
                ProfileKind::Schwartz { sigma } if !(sigma > 0.0) => {
                    return Err(LabError::InvalidParameter("Schwartz width must be positive".into()));
                }
                ProfileKind::Flat if p.flat_points.is_empty() => {
                    return Err(LabError::InvalidParameter("flat profile needs at least one flat point".into()));
                }
                _ => {}
            }
            for x in &p.flat_points {
                if !grid.contains(&x[..grid.dim()], 5.0) {
                    return Err(LabError::InvalidParameter(format!(
                        "flat point {:?} closer than 5 to the box edge",
                        &x[..grid.dim()]
                    )));
                }
            }
        }
        let mut phi = Vec::new();
        let mut grad = Vec::new();
        let mut lap = Vec::new();
        for p in &profiles {
            let jets: Vec<Jet> = grid.positions().map(|x| p.eval(x)).collect();
            phi.push(jets.iter().map(|j| j.value).collect());
            grad.push(jets.iter().map(|j| j.grad).collect());
            lap.push(jets.iter().map(|j| j.lap).collect());
        }
        Ok(Self { grid: *grid, profiles, phi, grad, lap })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn modes(&self) -> usize {
        self.profiles.len()
    }

    pub fn profiles(&self) -> &[NoiseProfile] {
        &self.profiles
    }

    pub fn phi(&self, l: usize) -> &[f64] {
        &self.phi[l]
    }

    pub fn grad(&self, l: usize) -> &[[f64; 2]] {
        &self.grad[l]
    }

    pub fn lap(&self, l: usize) -> &[f64] {
        &self.lap[l]
    }

    /// True when every gradient vanishes, so the gauge has no lower-order terms.
    pub fn is_spatially_constant(&self) -> bool {
        self.grad.iter().all(|g| g.iter().all(|v| v[0] == 0.0 && v[1] == 0.0))
            && self.lap.iter().all(|l| l.iter().all(|&v| v == 0.0))
    }

    /// `Σ_l φ_l(x) b_l`, the imaginary part of `W`.
    pub fn phase(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (phi, &bl) in self.phi.iter().zip(b) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += p * bl;
            }
        }
        out
    }

    /// `μ = ½ Σ_l φ_l²`.
    pub fn mu(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for phi in &self.phi {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += 0.5 * p * p;
            }
        }
        out
    }

    /// `a₁ = 2i Σ ∇φ_l b_l`, `a₀ = -Σ_j (Σ_l ∂_jφ_l b_l)² + i Σ Δφ_l b_l`.
    pub fn coefficients(&self, b: &[f64]) -> Coefficients {
        let n = self.grid.len();
        let d = self.grid.dim();
        let mut g = vec![[0.0f64; 2]; n];
        let mut lap = vec![0.0; n];
        for l in 0..self.modes() {
            let bl = b[l];
            for i in 0..n {
                g[i][0] += self.grad[l][i][0] * bl;
                g[i][1] += self.grad[l][i][1] * bl;
                lap[i] += self.lap[l][i] * bl;
            }
        }
        let a1 = (0..d).map(|c| g.iter().map(|v| Complex64::new(0.0, 2.0 * v[c])).collect()).collect();
        let a0 = g
            .iter()
            .zip(&lap)
            .map(|(v, &l)| Complex64::new(-(0..d).map(|c| v[c] * v[c]).sum::<f64>(), l))
            .collect();
        Coefficients { a1, a0 }
    }

    /// Largest `⟨x⟩² (|∇φ| + |Δφ|)` on the outermost ring of grid points.
    pub fn edge_decay(&self) -> f64 {
        let n = self.grid.points();
        let mut worst = 0.0f64;
        for (idx, x) in self.grid.positions().enumerate() {
            let on_edge = match self.grid.dim() {
                1 => idx == 0 || idx == n - 1,
                _ => {
                    let (i, j) = (idx / n, idx % n);
                    i == 0 || j == 0 || i == n - 1 || j == n - 1
                }
            };
            if !on_edge {
                continue;
            }
            let weight = 1.0 + radius(x, self.grid.dim()).powi(2);
            for l in 0..self.modes() {
                let g = self.grad[l][idx][0].hypot(self.grad[l][idx][1]);
                worst = worst.max(weight * (g + self.lap[l][idx].abs()));
            }
        }
        worst
    }
}

/// Lower-order gNLS coefficients at one time.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub a1: Vec<Vec<Complex64>>,
    pub a0: Vec<Complex64>,
}

impl Coefficients {
    pub fn is_zero(&self) -> bool {
        self.a0.iter().all(|z| *z == Complex64::new(0.0, 0.0))
            && self.a1.iter().all(|c| c.iter().all(|z| *z == Complex64::new(0.0, 0.0)))
    }
}

/// Largest centered finite-difference derivative of order 1..=`order` at `x`,
/// taken along every axis (and the diagonal in 2D).
pub fn flatness_defect(profile: &NoiseProfile, x: [f64; 2], order: usize) -> f64 {
    let h = 5e-5;
    let dirs: Vec<[f64; 2]> = if profile.dim == 1 {
        vec![[1.0, 0.0]]
    } else {
        vec![[1.0, 0.0], [0.0, 1.0], [std::f64::consts::FRAC_1_SQRT_2; 2]]
    };
    let mut worst = 0.0f64;
    for n in 1..=order {
        for e in &dirs {
            let mut acc = 0.0;
            let mut binom = 1.0;
            for j in 0..=n {
                let shift = (0.5 * n as f64 - j as f64) * h;
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * binom * profile.value([x[0] + shift * e[0], x[1] + shift * e[1]]);
                binom = binom * (n - j) as f64 / (j + 1) as f64;
            }
            worst = worst.max((acc / h.powi(n as i32)).abs());
        }
    }
    worst
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Brownian motion on a base step grid plus on-demand dyadic bridge
/// refinement. Base increments come from a ChaCha8 stream seeded with
/// `seed`; every bridge midpoint uses its own stream keyed by
/// `(seed, interval, level, index)`, so refined values never depend on the
/// order in which they are requested.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    seed: u64,
    modes: usize,
    base_times: Vec<f64>,
    base_values: Vec<Vec<f64>>,
    level: u32,
    cache: HashMap<(usize, u32, u64), Vec<f64>>,
}

pub const MAX_BRIDGE_LEVEL: u32 = 40;

/// Draws a Brownian path on a strictly increasing step grid.
pub fn sample_brownian(seed: u64, times: &[f64], modes: usize) -> Result<BrownianPath> {
    BrownianPath::sample(seed, times.to_vec(), modes)
}

impl BrownianPath {
    pub fn sample(seed: u64, times: Vec<f64>, modes: usize) -> Result<Self> {
        if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) || !times.iter().all(|t| t.is_finite()) {
            return Err(LabError::InvalidParameter("step grid must be finite and strictly increasing".into()));
        }
        if modes > MAX_MODES {
            return Err(LabError::InvalidParameter(format!("at most {MAX_MODES} noise modes")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![vec![0.0; modes]];
        for w in times.windows(2) {
            let sd = (w[1] - w[0]).sqrt();
            let prev = values.last().unwrap().clone();
            let next = prev
                .iter()
                .map(|b| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    b + sd * z
                })
                .collect();
            values.push(next);
        }
        Ok(Self { seed, modes, base_times: times, base_values: values, level: 0, cache: HashMap::new() })
    }

    pub fn uniform(seed: u64, t0: f64, dt: f64, steps: usize, modes: usize) -> Result<Self> {
        if !(dt > 0.0) || steps == 0 {
            return Err(LabError::InvalidParameter("uniform path needs dt > 0 and at least one step".into()));
        }
        Self::sample(seed, (0..=steps).map(|i| t0 + i as f64 * dt).collect(), modes)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn base_times(&self) -> &[f64] {
        &self.base_times
    }

    pub fn t_start(&self) -> f64 {
        self.base_times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.base_times.last().unwrap()
    }

    /// The same path on a grid refined `2×` by bridge midpoints.
    pub fn refine(&self) -> Self {
        let mut out = self.clone();
        out.level += 1;
        out
    }

    /// Number of steps at the current level.
    pub fn steps(&self) -> usize {
        (self.base_times.len() - 1) << self.level
    }

    fn node_time(&self, interval: usize, level: u32, m: u64) -> f64 {
        if m == 0 {
            return self.base_times[interval];
        }
        let (a, b) = (self.base_times[interval], self.base_times[interval + 1]);
        a + (b - a) * (m as f64 / (1u64 << level) as f64)
    }

    /// `B(t_interval + m 2^{-level} Δt_interval)`.
    pub fn value_at_dyadic(&mut self, interval: usize, level: u32, m: u64) -> Result<Vec<f64>> {
        if level > MAX_BRIDGE_LEVEL || interval >= self.base_times.len() || m > (1u64 << level) {
            return Err(LabError::InvalidParameter("dyadic node outside the path".into()));
        }
        if interval == self.base_times.len() - 1 && m != 0 {
            return Err(LabError::InvalidParameter("dyadic node beyond the last time".into()));
        }
        Ok(self.dyadic(interval, level, m))
    }

    fn dyadic(&mut self, interval: usize, mut level: u32, mut m: u64) -> Vec<f64> {
        if m == 1u64 << level {
            return self.base_values[interval + 1].clone();
        }
        if m == 0 {
            return self.base_values[interval].clone();
        }
        while m % 2 == 0 {
            m /= 2;
            level -= 1;
        }
        if let Some(v) = self.cache.get(&(interval, level, m)) {
            return v.clone();
        }
        let left = self.dyadic(interval, level, m - 1);
        let right = self.dyadic(interval, level, m + 1);
        let span = (self.base_times[interval + 1] - self.base_times[interval]) / (1u64 << (level - 1)) as f64;
        let sd = (0.25 * span).sqrt();
        let key = splitmix(
            splitmix(splitmix(self.seed ^ 0xB51D_6E).wrapping_add(interval as u64)).wrapping_add(level as u64)
                ^ m.wrapping_mul(0x2545_F491_4F6C_DD1D),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let mid: Vec<f64> = left
            .iter()
            .zip(&right)
            .map(|(a, b)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * (a + b) + sd * z
            })
            .collect();
        self.cache.insert((interval, level, m), mid.clone());
        mid
    }

    /// Times at the current refinement level.
    pub fn times(&self) -> Vec<f64> {
        let per = 1u64 << self.level;
        let mut out = Vec::with_capacity(self.steps() + 1);
        for i in 0..self.base_times.len() - 1 {
            for m in 0..per {
                out.push(self.node_time(i, self.level, m));
            }
        }
        out.push(self.t_end());
        out
    }

    /// Values `B_l(t_k)` at the current level, one row per time.
    pub fn values(&mut self) -> Vec<Vec<f64>> {
        let per = 1u64 << self.level;
        let mut out = Vec::with_capacity(self.steps() + 1);
        for i in 0..self.base_times.len() - 1 {
            for m in 0..per {
                out.push(self.dyadic(i, self.level, m));
            }
        }
        out.push(self.base_values.last().unwrap().clone());
        out
    }

    /// Increments `B(t_{k+1}) - B(t_k)` at the current level.
    pub fn increments(&mut self) -> Vec<Vec<f64>> {
        let v = self.values();
        v.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect()).collect()
    }

    /// Locates `t` on the dyadic lattice of depth `max_level`; errors if `t`
    /// is not a node.
    pub fn locate(&self, t: f64, max_level: u32) -> Result<(usize, u32, u64)> {
        let off = |reason: &str| LabError::TimeOutOfRange { t, reason: reason.into() };
        if t < self.t_start() || t > self.t_end() {
            return Err(off("outside the Brownian path"));
        }
        let i = match self.base_times.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
            Ok(i) => return Ok((i.min(self.base_times.len() - 1), 0, 0)),
            Err(i) => i - 1,
        };
        let (a, b) = (self.base_times[i], self.base_times[i + 1]);
        let per = (1u64 << max_level) as f64;
        let m = ((t - a) / (b - a) * per).round();
        if (self.node_time(i, max_level, m as u64) - t).abs() > 1e-12 * (b - a).max(1.0) {
            return Err(off("not a node of the refined step grid"));
        }
        Ok((i, max_level, m as u64))
    }

    /// `B(t)` for `t` on the current step grid.
    pub fn value_at(&mut self, t: f64) -> Result<Vec<f64>> {
        let (i, level, m) = self.locate(t, self.level)?;
        if i == self.base_times.len() - 1 {
            return Ok(self.base_values[i].clone());
        }
        Ok(self.dyadic(i, level, m))
    }

    /// CSV dump `t,B_1..B_N` at the current level.
    pub fn write_csv<W: Write>(&mut self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.modes).map(|l| format!("B_{l}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        let times = self.times();
        for (t, row) in times.iter().zip(self.values()) {
            let cols: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{t:.16e},{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Temporal drivers `h_l(t)` of the lower-order coefficients.
#[derive(Debug, Clone)]
pub enum Driver {
    Brownian(BrownianPath),
    /// `h_l(t) = amplitude · sin(ω t + l)`; smooth, for convergence studies.
    Sinusoid { amplitude: f64, omega: f64, modes: usize },
}

impl Driver {
    pub fn modes(&self) -> usize {
        match self {
            Self::Brownian(p) => p.modes(),
            Self::Sinusoid { modes, .. } => *modes,
        }
    }

    /// `h(t)`, with `t` located on a lattice of depth `max_level` for Brownian paths.
    pub fn values_at(&mut self, t: f64, max_level: u32) -> Result<Vec<f64>> {
        match self {
            Self::Brownian(p) => {
                let (i, level, m) = p.locate(t, max_level)?;
                if i == p.base_times.len() - 1 {
                    return Ok(p.base_values[i].clone());
                }
                Ok(p.dyadic(i, level, m))
            }
            Self::Sinusoid { amplitude, omega, modes } => {
                Ok((0..*modes).map(|l| *amplitude * (*omega * t + l as f64).sin()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeDirection {
    /// `v = e^{-W} X`.
    Remove,
    /// `X = e^{W} v`.
    Apply,
}

/// Multiplies by `e^{∓W}` with `W = i Σ φ_l b_l`.
pub fn gauge_with_values(f: &ComplexField, profiles: &NoiseProfileSet, b: &[f64], direction: GaugeDirection) -> Result<ComplexField> {
    if f.grid() != profiles.grid() {
        return Err(LabError::GridMismatch);
    }
    if b.len() != profiles.modes() {
        return Err(LabError::InvalidParameter("path and profile mode counts differ".into()));
    }
    let sign = match direction {
        GaugeDirection::Remove => -1.0,
        GaugeDirection::Apply => 1.0,
    };
    let phase = profiles.phase(b);
    let values = f
        .values()
        .iter()
        .zip(&phase)
        .map(|(z, th)| z * Complex64::from_polar(1.0, sign * th))
        .collect();
    ComplexField::from_values(f.grid(), values)
}

/// Gauge transform at a node `t` of the path's current step grid.
pub fn gauge_transform(
    f: &ComplexField,
    profiles: &NoiseProfileSet,
    path: &mut BrownianPath,
    t: f64,
    direction: GaugeDirection,
) -> Result<ComplexField> {
    let b = path.value_at(t)?;
    gauge_with_values(f, profiles, &b, direction)
}

/// `(a₁, a₀, μ)` at a node `t` of the path's current step grid.
pub fn lower_order_coefficients(
    profiles: &NoiseProfileSet,
    path: &mut BrownianPath,
    t: f64,
) -> Result<(Coefficients, Vec<f64>)> {
    let b = path.value_at(t)?;
    if b.len() != profiles.modes() {
        return Err(LabError::InvalidParameter("path and profile mode counts differ".into()));
    }
    Ok((profiles.coefficients(&b), profiles.mu()))
}
