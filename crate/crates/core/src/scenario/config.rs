//! Scenario configuration: TOML with one `section.key = value` assignment per
//! line (tables are accepted too). Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{LabError, Result};
use crate::exact::{Bubble, Soliton};
use crate::ground_state::critical_exponent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CriticalBlowup,
    MultiBubble,
    BourgainWang,
    MultiSoliton,
    NonpureSoliton,
    SnlsGaugeCheck,
    LoglogSupercritical,
    Custom,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::CriticalBlowup => "critical_blowup",
            Self::MultiBubble => "multi_bubble",
            Self::BourgainWang => "bourgain_wang",
            Self::MultiSoliton => "multi_soliton",
            Self::NonpureSoliton => "nonpure_soliton",
            Self::SnlsGaugeCheck => "snls_gauge_check",
            Self::LoglogSupercritical => "loglog_supercritical",
            Self::Custom => "custom",
        }
    }

    fn needs_critical(&self) -> bool {
        !matches!(self, Self::MultiSoliton | Self::Custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub length: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub t_blow: Option<f64>,
    pub bubbles: Vec<Bubble>,
    pub solitons: Vec<Soliton>,
    /// `||z*||_{H^1}` as a fraction of `||Q||_{H^1}`.
    pub z_amplitude: Option<f64>,
    pub z_center: Option<[f64; 2]>,
    pub z_width: Option<f64>,
    /// Step of the backward solve for the regular part.
    pub z_dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindConfig {
    #[default]
    None,
    Constant,
    Schwartz,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverConfig {
    #[default]
    Brownian,
    Sinusoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKindConfig,
    pub amplitude: f64,
    pub modes: usize,
    #[serde(with = "seed")]
    pub seed: u64,
    pub sigma: f64,
    /// Per-mode centers of Schwartz profiles; missing entries sit at the origin.
    pub centers: Vec<[f64; 2]>,
    /// Flat points; defaults to the bubble positions.
    pub flat_points: Vec<[f64; 2]>,
    pub driver: DriverConfig,
    /// Spacing of the base Brownian grid; defaults to `evolve.dt0`.
    pub path_dt: Option<f64>,
    pub omega: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKindConfig::None,
            amplitude: 0.0,
            modes: 1,
            seed: 0,
            sigma: 2.0,
            centers: Vec::new(),
            flat_points: Vec::new(),
            driver: DriverConfig::Brownian,
            path_dt: None,
            omega: 1.0,
        }
    }
}

impl NoiseConfig {
    pub fn enabled(&self) -> bool {
        self.kind != NoiseKindConfig::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSettings {
    pub t0: f64,
    pub t1: Option<f64>,
    pub dt0: f64,
    pub adaptive: bool,
    pub cadence: usize,
    pub output_times: Vec<f64>,
    pub g_max: Option<f64>,
    pub width_factor: f64,
    pub loc_radius: f64,
    pub write_snapshots: bool,
}

impl Default for EvolveSettings {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t1: None,
            dt0: 1e-3,
            adaptive: true,
            cadence: 1,
            output_times: Vec::new(),
            g_max: None,
            width_factor: 4.0,
            loc_radius: 1.0,
            write_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    /// Field snapshot file, relative to the config file.
    pub file: Option<String>,
    /// Gaussian `a e^{-|x-c|²/w²}`; the amplitude is set by `mass_factor`
    /// (mass as a multiple of `||Q||²`) when given.
    pub amplitude: f64,
    pub width: f64,
    pub center: [f64; 2],
    pub mass_factor: Option<f64>,
    /// Linear phase `e^{i k·x}`.
    pub momentum: [f64; 2],
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { file: None, amplitude: 1.0, width: 1.0, center: [0.0; 2], mass_factor: None, momentum: [0.0; 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Relative mass drift limit; defaults depend on whether noise is on.
    pub mass_drift: Option<f64>,
    /// Steps re-integrated to confirm reproducibility.
    pub determinism_steps: usize,
    /// Bound on the gauge-check modulus discrepancy.
    pub gauge_tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { mass_drift: None, determinism_steps: 20, gauge_tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub grid: GridConfig,
    /// Nonlinearity power; the critical `1 + 4/d` when absent.
    #[serde(default)]
    pub p: Option<f64>,
    /// Output directory, resolved against the output root.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "one")]
    pub ensemble: usize,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub evolve: EvolveSettings,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub checks: CheckConfig,
}

fn one() -> usize {
    1
}

/// Seeds span all of `u64`; values above `i64::MAX` are written as strings.
mod seed {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(i) => u64::try_from(i).map_err(|_| D::Error::custom("seed must be nonnegative")),
            Raw::Text(t) => t.parse().map_err(|_| D::Error::custom(format!("seed '{t}' is not a 64-bit unsigned integer"))),
        }
    }
}

fn config_err(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn p(&self) -> f64 {
        self.p.unwrap_or_else(|| critical_exponent(self.grid.dim))
    }

    pub fn t_blow(&self) -> f64 {
        self.profile.t_blow.unwrap_or(1.0)
    }

    /// Bubbles with the single-bubble default.
    pub fn bubbles(&self) -> Vec<Bubble> {
        if self.profile.bubbles.is_empty() {
            vec![Bubble { x: [0.0; 2], w: 1.0, theta: 0.0 }]
        } else {
            self.profile.bubbles.clone()
        }
    }

    /// Solitons with the two-soliton `c = ±2` default.
    pub fn solitons(&self) -> Vec<Soliton> {
        if self.profile.solitons.is_empty() {
            let mk = |c: f64, x: f64| Soliton { c: [c, 0.0], w: 1.0, theta: 0.0, x0: [x, 0.0] };
            vec![mk(2.0, -8.0), mk(-2.0, 8.0)]
        } else {
            self.profile.solitons.clone()
        }
    }

    pub fn t1(&self) -> f64 {
        self.evolve.t1.unwrap_or(match self.kind {
            ScenarioKind::CriticalBlowup | ScenarioKind::SnlsGaugeCheck => self.t_blow(),
            ScenarioKind::MultiBubble | ScenarioKind::BourgainWang => 0.8 * self.t_blow(),
            ScenarioKind::MultiSoliton | ScenarioKind::NonpureSoliton => self.evolve.t0 + 3.0,
            ScenarioKind::LoglogSupercritical | ScenarioKind::Custom => self.evolve.t0 + 1.0,
        })
    }

    pub fn z_amplitude(&self) -> f64 {
        self.profile.z_amplitude.unwrap_or(0.05)
    }

    /// Nearest point to the box center at distance ≥ 10 from all bubbles.
    pub fn z_center(&self) -> Result<[f64; 2]> {
        if let Some(c) = self.profile.z_center {
            return Ok(c);
        }
        let d = self.grid.dim;
        let bubbles = self.bubbles();
        let half = 0.5 * self.grid.length - 5.0;
        let n = 400;
        let mut best: Option<([f64; 2], f64)> = None;
        let axis: Vec<f64> = (0..=n).map(|i| -half + 2.0 * half * i as f64 / n as f64).collect();
        let ys: Vec<f64> = if d == 2 { axis.clone() } else { vec![0.0] };
        for &y in &ys {
            for &x in &axis {
                let far = bubbles.iter().all(|b| {
                    let dy = if d == 2 { y - b.x[1] } else { 0.0 };
                    ((x - b.x[0]).powi(2) + dy * dy).sqrt() >= 10.0
                });
                let r = x * x + y * y;
                if far && best.map_or(true, |(_, rb)| r < rb) {
                    best = Some(([x, y], r));
                }
            }
        }
        best.map(|b| b.0).ok_or_else(|| config_err("no point of the box lies 10 away from every bubble; set profile.z_center"))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.dim == 1 || g.dim == 2) {
            return Err(config_err("grid.dim must be 1 or 2"));
        }
        if !(g.length > 0.0) || g.points < 4 || g.points % 2 != 0 {
            return Err(config_err("grid.length must be positive and grid.points even and ≥ 4"));
        }
        let p = self.p();
        if self.kind.needs_critical() && (p - critical_exponent(g.dim)).abs() > 1e-12 {
            return Err(config_err(format!("{} needs the critical power {}", self.kind.as_str(), critical_exponent(g.dim))));
        }
        let e = &self.evolve;
        if !(e.dt0 > 0.0) || e.cadence == 0 || !(e.width_factor > 0.0) || !(e.loc_radius > 0.0) {
            return Err(config_err("evolve.dt0, cadence, width_factor and loc_radius must be positive"));
        }
        if !(self.t1() > e.t0) {
            return Err(config_err("evolve.t1 must exceed evolve.t0"));
        }
        if self.ensemble == 0 || self.threads == Some(0) {
            return Err(config_err("ensemble and threads must be at least 1"));
        }
        let n = &self.noise;
        if n.enabled() {
            if n.modes == 0 || !(n.amplitude >= 0.0) || !(n.sigma > 0.0) {
                return Err(config_err("noise needs modes ≥ 1, amplitude ≥ 0 and sigma > 0"));
            }
            if n.path_dt.is_some_and(|d| !(d > 0.0)) {
                return Err(config_err("noise.path_dt must be positive"));
            }
        }
        match self.kind {
            ScenarioKind::MultiBubble if self.profile.bubbles.len() < 2 => {
                return Err(config_err("multi_bubble needs at least two profile.bubbles"));
            }
            ScenarioKind::BourgainWang | ScenarioKind::NonpureSoliton => {
                let a = self.z_amplitude();
                if !(a > 0.0 && a <= 0.1) {
                    return Err(config_err("profile.z_amplitude must lie in (0, 0.1] (fraction of ||Q||_H1)"));
                }
                if self.profile.z_width.is_some_and(|w| !(w > 0.0)) {
                    return Err(config_err("profile.z_width must be positive"));
                }
                if self.kind == ScenarioKind::NonpureSoliton && !(e.t0 > 0.0) {
                    return Err(config_err("nonpure_soliton needs evolve.t0 > 0"));
                }
            }
            ScenarioKind::SnlsGaugeCheck if !n.enabled() => {
                return Err(config_err("snls_gauge_check needs a noise.kind"));
            }
            ScenarioKind::LoglogSupercritical if self.initial.mass_factor.is_some_and(|m| !(m > 1.0)) => {
                return Err(config_err("loglog_supercritical needs initial.mass_factor > 1"));
            }
            _ => {}
        }
        if matches!(self.kind, ScenarioKind::CriticalBlowup | ScenarioKind::MultiBubble | ScenarioKind::BourgainWang | ScenarioKind::SnlsGaugeCheck)
            && !(e.t0 < self.t_blow())
        {
            return Err(config_err("evolve.t0 must precede profile.t_blow"));
        }
        Ok(())
    }

    /// Configuration of ensemble member `index`: seed shifted, single run.
    pub fn member(&self, index: usize) -> Self {
        let mut c = self.clone();
        c.noise.seed = self.noise.seed.wrapping_add(index as u64);
        c.ensemble = 1;
        c
    }
}
