//! Closed-form pseudo-conformal blow-ups, solitary waves, and the
//! pseudo-conformal map between them.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{radius, ComplexField, FourierInterpolator, GridSpec, OutsideBox};
use crate::ground_state::QProfile;
use crate::Complex64;

/// One concentration point of a blow-up profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bubble {
    #[serde(default)]
    pub x: [f64; 2],
    #[serde(default = "one")]
    pub w: f64,
    #[serde(default)]
    pub theta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupParams {
    /// Blow-up time `T`.
    pub t_blow: f64,
    pub bubbles: Vec<Bubble>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Soliton {
    #[serde(default)]
    pub c: [f64; 2],
    #[serde(default = "one")]
    pub w: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub x0: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolitonParams {
    pub solitons: Vec<Soliton>,
    pub p: f64,
}

/// Either family, evaluated through [`ProfileParams::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileParams {
    Blowup(BlowupParams),
    Solitons(SolitonParams),
}

impl ProfileParams {
    pub fn evaluate(&self, t: f64, grid: &GridSpec, q: &QProfile) -> Result<ComplexField> {
        match self {
            Self::Blowup(b) => pseudo_conformal_blowup(b, t, grid, q),
            Self::Solitons(s) => solitary_wave(s, t, grid, q),
        }
    }

    /// Component centers at time `t`.
    pub fn centers(&self, t: f64) -> Vec<[f64; 2]> {
        match self {
            Self::Blowup(b) => b.bubbles.iter().map(|k| k.x).collect(),
            Self::Solitons(s) => s.solitons.iter().map(|k| k.center(t)).collect(),
        }
    }

    /// Evaluates component `k` alone.
    pub fn component(&self, k: usize, t: f64, grid: &GridSpec, q: &QProfile) -> Result<ComplexField> {
        match self {
            Self::Blowup(b) => pseudo_conformal_blowup(
                &BlowupParams { t_blow: b.t_blow, bubbles: vec![b.bubbles[k]] },
                t,
                grid,
                q,
            ),
            Self::Solitons(s) => {
                solitary_wave(&SolitonParams { solitons: vec![s.solitons[k]], p: s.p }, t, grid, q)
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Blowup(b) => b.bubbles.len(),
            Self::Solitons(s) => s.solitons.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Soliton {
    pub fn center(&self, t: f64) -> [f64; 2] {
        [self.x0[0] + self.c[0] * t, self.x0[1] + self.c[1] * t]
    }
}

fn dot(a: [f64; 2], b: [f64; 2], dim: usize) -> f64 {
    (0..dim).map(|i| a[i] * b[i]).sum()
}

fn diff(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

impl BlowupParams {
    pub fn single(t_blow: f64, w: f64) -> Self {
        Self { t_blow, bubbles: vec![Bubble { x: [0.0; 2], w, theta: 0.0 }] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.t_blow.is_finite() {
            return Err(LabError::InvalidParameter("blow-up time must be finite".into()));
        }
        for (i, b) in self.bubbles.iter().enumerate() {
            if !(b.w > 0.0) {
                return Err(LabError::InvalidParameter(format!("bubble {i}: scale must be positive")));
            }
            for other in &self.bubbles[..i] {
                if radius(diff(b.x, other.x), dim) == 0.0 {
                    return Err(LabError::InvalidParameter("bubble positions must be distinct".into()));
                }
            }
        }
        Ok(())
    }

    /// Smallest width `w_k (T - t)` over the bubbles.
    pub fn min_width(&self, t: f64) -> f64 {
        self.bubbles.iter().map(|b| b.w * (self.t_blow - t)).fold(f64::INFINITY, f64::min)
    }
}

/// `Σ_k (w_k(T-t))^{-d/2} Q((x-x_k)/(w_k(T-t))) exp(-i|x-x_k|²/(4(T-t)) + i/(w_k²(T-t)) + iϑ_k)`.
pub fn pseudo_conformal_blowup(
    params: &BlowupParams,
    t: f64,
    grid: &GridSpec,
    q: &QProfile,
) -> Result<ComplexField> {
    let d = grid.dim();
    params.validate(d)?;
    let tau = params.t_blow - t;
    if !(tau > 0.0) {
        return Err(LabError::TimeOutOfRange { t, reason: format!("profile exists for t < T = {}", params.t_blow) });
    }
    let required = 4.0 * grid.dx();
    let width = params.min_width(t);
    if width < required {
        return Err(LabError::UnderResolved { width, required });
    }
    let df = d as f64;
    Ok(ComplexField::from_fn(grid, |x| {
        params.bubbles.iter().fold(Complex64::new(0.0, 0.0), |acc, b| {
            let s = b.w * tau;
            let y = diff(x, b.x);
            let r = radius(y, d);
            let amp = s.powf(-0.5 * df) * q.value(r / s);
            let phase = -r * r / (4.0 * tau) + 1.0 / (b.w * b.w * tau) + b.theta;
            acc + Complex64::from_polar(amp, phase)
        })
    }))
}

/// `Σ_k Q_{w_k}(x - c_k t - x_k⁰) e^{i(c_k·x/2 - |c_k|²t/4 + t/w_k² + ϑ_k)}` with
/// `Q_w(x) = w^{-2/(p-1)} Q(x/w)`.
pub fn solitary_wave(params: &SolitonParams, t: f64, grid: &GridSpec, q: &QProfile) -> Result<ComplexField> {
    let d = grid.dim();
    if (params.p - q.p()).abs() > 1e-12 || q.dim() != d {
        return Err(LabError::InvalidParameter("ground-state profile does not match (d, p)".into()));
    }
    for (i, s) in params.solitons.iter().enumerate() {
        if !(s.w > 0.0) {
            return Err(LabError::InvalidParameter(format!("soliton {i}: scale must be positive")));
        }
        for other in &params.solitons[..i] {
            if radius(diff(s.c, other.c), d) == 0.0 {
                return Err(LabError::InvalidParameter("soliton velocities must be pairwise distinct".into()));
            }
        }
        let center = s.center(t);
        if !grid.contains(&center[..d], 5.0 * s.w) {
            return Err(LabError::OutsideBox(format!("soliton {i} center {:?} at t = {t}", &center[..d])));
        }
    }
    let expo = 2.0 / (params.p - 1.0);
    Ok(ComplexField::from_fn(grid, |x| {
        params.solitons.iter().fold(Complex64::new(0.0, 0.0), |acc, s| {
            let y = diff(x, s.center(t));
            let amp = s.w.powf(-expo) * q.value(radius(y, d) / s.w);
            let phase = 0.5 * dot(s.c, x, d) - 0.25 * dot(s.c, s.c, d) * t + t / (s.w * s.w) + s.theta;
            acc + Complex64::from_polar(amp, phase)
        })
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapDirection {
    Forward,
    Inverse,
}

/// Pseudo-conformal map. `t` is the time of the output field; the returned
/// time is the one the input field is taken to represent.
///
/// Forward: `C_T(u)(t,x) = (T-t)^{-d/2} u(1/(T-t), x/(T-t)) e^{-i|x|²/(4(T-t))}`, input time `1/(T-t)`.
/// Inverse: `t^{-d/2} z(T-1/t, x/t) e^{i|x|²/(4t)}`, input time `T - 1/t`.
pub fn pseudo_conformal_map(
    f: &ComplexField,
    t: f64,
    t_blow: f64,
    direction: MapDirection,
) -> Result<(ComplexField, f64)> {
    let grid = *f.grid();
    let d = grid.dim();
    // output(x) = s^{-d/2} f(x/s) e^{-i σ |x|²/(4s)}
    let (s, sigma, mapped) = match direction {
        MapDirection::Forward => {
            let s = t_blow - t;
            if s == 0.0 {
                return Err(LabError::TimeOutOfRange { t, reason: "forward map is singular at t = T".into() });
            }
            (s, 1.0, 1.0 / s)
        }
        MapDirection::Inverse => {
            if t == 0.0 {
                return Err(LabError::TimeOutOfRange { t, reason: "inverse map is singular at t = 0".into() });
            }
            (t, -1.0, t_blow - 1.0 / t)
        }
    };
    if !(s > 0.0) {
        return Err(LabError::TimeOutOfRange { t, reason: "scale factor must be positive".into() });
    }
    if s > 1.0 {
        // only the sub-box |y| < L/(2s) of the input is sampled
        let half = 0.5 * grid.extent() / s;
        let total = f.norm_sq();
        let outside: f64 = f
            .values()
            .iter()
            .zip(grid.positions())
            .filter(|(_, x)| x[..d].iter().any(|c| c.abs() >= half))
            .map(|(z, _)| z.norm_sqr())
            .sum::<f64>()
            * grid.cell_volume();
        if outside > 1e-10 * total.max(f64::MIN_POSITIVE) {
            return Err(LabError::OutsideBox(format!(
                "scale {s} pushes {:.3e} of the mass outside the box",
                outside / total
            )));
        }
    }
    let axis: Vec<f64> = grid.coords().iter().map(|x| x / s).collect();
    let axes = vec![axis; d];
    let interp = FourierInterpolator::new(f);
    let inner = interp.eval_tensor(&axes, OutsideBox::Zero);
    let amp = s.powf(-0.5 * d as f64);
    let values = inner
        .into_iter()
        .zip(grid.positions())
        .map(|(u, x)| {
            let r2 = dot(x, x, d);
            u * Complex64::from_polar(amp, -sigma * r2 / (4.0 * s))
        })
        .collect();
    Ok((ComplexField::from_values(&grid, values)?, mapped))
}
