//! Uniform periodic grids, complex fields, spectral differentiation and
//! quadrature norms.
//!
//! The box is `[-L/2, L/2)` along every axis. Fields are stored row-major:
//! in 2D the flat index is `i * N + j` with `i` running along axis 0 (x) and
//! `j` along axis 1 (y).

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    extent: f64,
    points: usize,
}

impl GridSpec {
    pub fn new(dim: usize, extent: f64, points: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(LabError::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(LabError::InvalidGrid(format!("extent {extent} must be positive")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(LabError::InvalidGrid(format!(
                "point count {points} must be a power of two >= 8"
            )));
        }
        Ok(Self { dim, extent, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dx(&self) -> f64 {
        self.extent / self.points as f64
    }

    /// Total number of samples, `N^d`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Axis coordinates `x_j = -L/2 + j dx`.
    pub fn coords(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.points).map(|j| -0.5 * self.extent + j as f64 * dx).collect()
    }

    /// Angular wavenumbers `2 pi m / L` in DFT ordering.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.points as i64;
        (0..n)
            .map(|m| {
                let m = if m < n / 2 { m } else { m - n };
                2.0 * PI * m as f64 / self.extent
            })
            .collect()
    }

    /// Position of the flat sample `idx`; unused components are zero.
    pub fn position(&self, idx: usize) -> [f64; 2] {
        let dx = self.dx();
        let x0 = -0.5 * self.extent;
        match self.dim {
            1 => [x0 + idx as f64 * dx, 0.0],
            _ => {
                let i = idx / self.points;
                let j = idx % self.points;
                [x0 + i as f64 * dx, x0 + j as f64 * dx]
            }
        }
    }

    /// Iterator over all sample positions in storage order.
    pub fn positions(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(move |idx| self.position(idx))
    }

    /// Whether `x` lies inside the box with the given margin to every face.
    pub fn contains(&self, x: &[f64], margin: f64) -> bool {
        let half = 0.5 * self.extent;
        x.iter().take(self.dim).all(|&c| c >= -half + margin && c <= half - margin)
    }
}

/// Euclidean norm of the first `dim` components.
pub(crate) fn radius(x: [f64; 2], dim: usize) -> f64 {
    if dim == 1 {
        x[0].abs()
    } else {
        x[0].hypot(x[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self { grid: *grid, values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_values(grid: &GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(LabError::NonFinite(format!("field value at index {pos}")));
        }
        Ok(Self { grid: *grid, values })
    }

    /// Builds a field from values already known to be finite and of the right length.
    pub(crate) fn from_raw(grid: &GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid: *grid, values }
    }

    /// Samples `f` at every grid position.
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> Complex64) -> Self {
        let values = grid.positions().map(f).collect();
        Self { grid: *grid, values }
    }

    pub fn from_real(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|z| z * a).collect())
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: Complex64, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(LabError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect();
        Ok(Self::from_raw(&self.grid, values))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(Complex64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(Complex64::new(-1.0, 0.0), other)
    }

    pub fn conj(&self) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|z| z.conj()).collect())
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// `dx^d * sum |f|^2`.
    pub fn norm_sq(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `int |f|^q`.
    pub fn lq_integral(&self, q: f64) -> f64 {
        let half = 0.5 * q;
        let sum: f64 = if half.fract() == 0.0 && half.abs() < 64.0 {
            self.values.iter().map(|z| z.norm_sqr().powi(half as i32)).sum()
        } else {
            self.values.iter().map(|z| z.norm().powf(q)).sum()
        };
        self.grid.cell_volume() * sum
    }
}

/// FFT workspace bound to one grid. Not shared across threads.
pub struct Spectral {
    grid: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    ksq: Vec<f64>,
    scratch: Vec<Complex64>,
    transpose_buf: Vec<Complex64>,
}

impl Spectral {
    pub fn new(grid: &GridSpec) -> Self {
        let n = grid.points();
        let (fwd, inv) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        });
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let k = grid.wavenumbers();
        let ksq = match grid.dim() {
            1 => k.iter().map(|k| k * k).collect(),
            _ => {
                let mut out = Vec::with_capacity(n * n);
                for ki in &k {
                    for kj in &k {
                        out.push(ki * ki + kj * kj);
                    }
                }
                out
            }
        };
        Self {
            grid: *grid,
            fwd,
            inv,
            k,
            ksq,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            transpose_buf: Vec::new(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Axis wavenumbers.
    pub fn k(&self) -> &[f64] {
        &self.k
    }

    /// `|k|^2` for every flat index.
    pub fn ksq(&self) -> &[f64] {
        &self.ksq
    }

    /// Wavenumber of flat index `idx` along `axis`.
    pub fn k_component(&self, idx: usize, axis: usize) -> f64 {
        let n = self.grid.points();
        match (self.grid.dim(), axis) {
            (1, _) => self.k[idx],
            (_, 0) => self.k[idx / n],
            _ => self.k[idx % n],
        }
    }

    fn transpose(&mut self, data: &mut [Complex64]) {
        let n = self.grid.points();
        self.transpose_buf.clear();
        self.transpose_buf.extend_from_slice(data);
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.transpose_buf[i * n + j];
            }
        }
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.grid.len());
        self.fwd.process_with_scratch(data, &mut self.scratch);
        if self.grid.dim() == 2 {
            self.transpose(data);
            self.fwd.process_with_scratch(data, &mut self.scratch);
            self.transpose(data);
        }
    }

    /// In-place inverse transform, normalized so that `inverse(forward(f)) = f`.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.grid.len());
        self.inv.process_with_scratch(data, &mut self.scratch);
        if self.grid.dim() == 2 {
            self.transpose(data);
            self.inv.process_with_scratch(data, &mut self.scratch);
            self.transpose(data);
        }
        let norm = 1.0 / self.grid.len() as f64;
        for z in data.iter_mut() {
            *z *= norm;
        }
    }

    /// Spectral partial derivatives along each axis.
    pub fn gradient(&mut self, f: &[Complex64]) -> Vec<Vec<Complex64>> {
        let mut hat = f.to_vec();
        self.forward(&mut hat);
        self.gradient_from_hat(&hat)
    }

    pub(crate) fn gradient_from_hat(&mut self, hat: &[Complex64]) -> Vec<Vec<Complex64>> {
        (0..self.grid.dim())
            .map(|axis| {
                let mut d: Vec<Complex64> = hat
                    .iter()
                    .enumerate()
                    .map(|(idx, z)| z * Complex64::new(0.0, self.k_component(idx, axis)))
                    .collect();
                self.inverse(&mut d);
                d
            })
            .collect()
    }

    pub fn laplacian(&mut self, f: &[Complex64]) -> Vec<Complex64> {
        let mut hat = f.to_vec();
        self.forward(&mut hat);
        for (z, ksq) in hat.iter_mut().zip(&self.ksq) {
            *z *= -ksq;
        }
        self.inverse(&mut hat);
        hat
    }

    /// `||grad f||_{L^2}^2` evaluated on the spectral side (Parseval).
    pub fn grad_norm_sq(&mut self, f: &[Complex64]) -> f64 {
        let mut hat = f.to_vec();
        self.forward(&mut hat);
        let s: f64 = hat.iter().zip(&self.ksq).map(|(z, k)| z.norm_sqr() * k).sum();
        s * self.grid.cell_volume() / self.grid.len() as f64
    }

    /// `||f||_{L^2}^2` evaluated on the spectral side (Parseval).
    pub fn spectral_norm_sq(&mut self, f: &[Complex64]) -> f64 {
        let mut hat = f.to_vec();
        self.forward(&mut hat);
        let s: f64 = hat.iter().map(|z| z.norm_sqr()).sum();
        s * self.grid.cell_volume() / self.grid.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Derivatives {
    pub gradient: Vec<ComplexField>,
    pub laplacian: ComplexField,
}

pub fn spectral_derivatives(f: &ComplexField) -> Result<Derivatives> {
    if !f.is_finite() {
        return Err(LabError::NonFinite("spectral_derivatives input".into()));
    }
    let mut sp = Spectral::new(f.grid());
    let gradient = sp
        .gradient(f.values())
        .into_iter()
        .map(|g| ComplexField::from_raw(f.grid(), g))
        .collect();
    let laplacian = ComplexField::from_raw(f.grid(), sp.laplacian(f.values()));
    Ok(Derivatives { gradient, laplacian })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormSuite {
    pub l2: f64,
    /// `||f||_{L^p}` with `p = 2 + 4/d`.
    pub lp: f64,
    pub lp_exponent: f64,
    pub h1: f64,
    pub sigma: f64,
    /// `||x f||_{L^2}` with `x` measured from the box center.
    pub weighted_x: f64,
    pub grad: f64,
}

pub fn norm_suite(f: &ComplexField) -> NormSuite {
    let grid = f.grid();
    let mut sp = Spectral::new(grid);
    let l2sq = f.norm_sq();
    let grad_sq: f64 = sp
        .gradient(f.values())
        .iter()
        .map(|g| grid.cell_volume() * g.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum();
    let p = 2.0 + 4.0 / grid.dim() as f64;
    let lp = f.lq_integral(p).powf(1.0 / p);
    let wx_sq = grid.cell_volume()
        * f.values()
            .iter()
            .zip(grid.positions())
            .map(|(z, x)| z.norm_sqr() * (x[0] * x[0] + x[1] * x[1]))
            .sum::<f64>();
    let h1sq = l2sq + grad_sq;
    NormSuite {
        l2: l2sq.sqrt(),
        lp,
        lp_exponent: p,
        h1: h1sq.sqrt(),
        sigma: (h1sq + wx_sq).sqrt(),
        weighted_x: wx_sq.sqrt(),
        grad: grad_sq.sqrt(),
    }
}

/// `<f, g> = int conj(f) g`, conjugate-linear in the first slot.
pub fn l2_inner(f: &ComplexField, g: &ComplexField) -> Result<Complex64> {
    if f.grid() != g.grid() {
        return Err(LabError::GridMismatch);
    }
    let s: Complex64 = f.values().iter().zip(g.values()).map(|(a, b)| a.conj() * b).sum();
    Ok(s * f.grid().cell_volume())
}

/// Out-of-box policy for off-grid evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutsideBox {
    /// Evaluate the periodic trigonometric interpolant.
    Periodic,
    /// Points outside `[-L/2, L/2)` evaluate to zero.
    Zero,
}

/// Trigonometric interpolation of a field at off-grid points.
pub struct FourierInterpolator {
    grid: GridSpec,
    hat: Vec<Complex64>,
    k: Vec<f64>,
}

impl FourierInterpolator {
    pub fn new(f: &ComplexField) -> Self {
        let mut hat = f.values().to_vec();
        Spectral::new(f.grid()).forward(&mut hat);
        let n = f.grid().len() as f64;
        for z in hat.iter_mut() {
            *z /= n;
        }
        Self { grid: *f.grid(), hat, k: f.grid().wavenumbers() }
    }

    /// Row of basis values `e^{i k (x - x0)}` with the Nyquist mode split
    /// symmetrically, along with first and second derivatives when requested.
    fn basis(&self, x: f64, order: usize) -> [Vec<Complex64>; 3] {
        let n = self.grid.points();
        let x0 = -0.5 * self.grid.extent();
        let k = &self.k;
        let mut b = [vec![Complex64::new(0.0, 0.0); n], Vec::new(), Vec::new()];
        if order >= 1 {
            b[1] = vec![Complex64::new(0.0, 0.0); n];
        }
        if order >= 2 {
            b[2] = vec![Complex64::new(0.0, 0.0); n];
        }
        let s = x - x0;
        for m in 0..n {
            if m == n / 2 {
                let kn = k[m].abs();
                b[0][m] = Complex64::new((kn * s).cos(), 0.0);
                if order >= 1 {
                    b[1][m] = Complex64::new(-kn * (kn * s).sin(), 0.0);
                }
                if order >= 2 {
                    b[2][m] = Complex64::new(-kn * kn * (kn * s).cos(), 0.0);
                }
            } else {
                let e = Complex64::from_polar(1.0, k[m] * s);
                b[0][m] = e;
                if order >= 1 {
                    b[1][m] = e * Complex64::new(0.0, k[m]);
                }
                if order >= 2 {
                    b[2][m] = e * (-k[m] * k[m]);
                }
            }
        }
        b
    }

    fn inside(&self, x: f64) -> bool {
        let half = 0.5 * self.grid.extent();
        x >= -half && x < half
    }

    /// Values on the tensor product of `axes[0] x axes[1]` (only `axes[0]` in 1D),
    /// stored in the same row-major layout as fields.
    pub fn eval_tensor(&self, axes: &[Vec<f64>], policy: OutsideBox) -> Vec<Complex64> {
        let n = self.grid.points();
        match self.grid.dim() {
            1 => axes[0]
                .iter()
                .map(|&x| {
                    if policy == OutsideBox::Zero && !self.inside(x) {
                        return Complex64::new(0.0, 0.0);
                    }
                    let b = self.basis(x, 0);
                    b[0].iter().zip(&self.hat).map(|(e, h)| e * h).sum()
                })
                .collect(),
            _ => {
                let (xs, ys) = (&axes[0], &axes[1]);
                let by: Vec<Vec<Complex64>> = ys.iter().map(|&y| self.basis(y, 0)[0].clone()).collect();
                // Contract axis 1 first: partial[m][b] = sum_n hat[m][n] e_n(y_b).
                let mut partial = vec![Complex64::new(0.0, 0.0); n * ys.len()];
                for m in 0..n {
                    let row = &self.hat[m * n..(m + 1) * n];
                    for (b, e) in by.iter().enumerate() {
                        partial[m * ys.len() + b] = row.iter().zip(e).map(|(h, e)| h * e).sum();
                    }
                }
                let mut out = vec![Complex64::new(0.0, 0.0); xs.len() * ys.len()];
                for (a, &x) in xs.iter().enumerate() {
                    let ex = self.basis(x, 0);
                    for (b, &y) in ys.iter().enumerate() {
                        if policy == OutsideBox::Zero && !(self.inside(x) && self.inside(y)) {
                            continue;
                        }
                        out[a * ys.len() + b] =
                            (0..n).map(|m| ex[0][m] * partial[m * ys.len() + b]).sum();
                    }
                }
                out
            }
        }
    }

    /// Value, gradient and Hessian of the interpolant at one point.
    pub fn eval_point(&self, x: [f64; 2]) -> (Complex64, [Complex64; 2], [[Complex64; 2]; 2]) {
        let n = self.grid.points();
        let zero = Complex64::new(0.0, 0.0);
        match self.grid.dim() {
            1 => {
                let b = self.basis(x[0], 2);
                let mut out = [zero; 3];
                for m in 0..n {
                    for o in 0..3 {
                        out[o] += b[o][m] * self.hat[m];
                    }
                }
                (out[0], [out[1], zero], [[out[2], zero], [zero, zero]])
            }
            _ => {
                let bx = self.basis(x[0], 2);
                let by = self.basis(x[1], 2);
                // rows[o][m] = sum_n hat[m][n] by[o][n]
                let mut rows = [vec![zero; n], vec![zero; n], vec![zero; n]];
                for m in 0..n {
                    let row = &self.hat[m * n..(m + 1) * n];
                    for o in 0..3 {
                        rows[o][m] = row.iter().zip(&by[o]).map(|(h, e)| h * e).sum();
                    }
                }
                let contract = |ox: usize, oy: usize| -> Complex64 {
                    (0..n).map(|m| bx[ox][m] * rows[oy][m]).sum()
                };
                let val = contract(0, 0);
                let grad = [contract(1, 0), contract(0, 1)];
                let hxy = contract(1, 1);
                let hess = [[contract(2, 0), hxy], [hxy, contract(0, 2)]];
                (val, grad, hess)
            }
        }
    }
}

/// Writes a field snapshot: header `d,N,L,t` then one `re,im` line per sample.
pub fn write_snapshot<W: Write>(mut w: W, field: &ComplexField, t: f64) -> Result<()> {
    let g = field.grid();
    writeln!(w, "{},{},{:.16e},{:.16e}", g.dim(), g.points(), g.extent(), t)?;
    for z in field.values() {
        writeln!(w, "{:.16e},{:.16e}", z.re, z.im)?;
    }
    Ok(())
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<(ComplexField, f64)> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| LabError::Parse("empty snapshot".into()))??;
    let parts: Vec<&str> = header.trim().split(',').collect();
    if parts.len() != 4 {
        return Err(LabError::Parse(format!("bad snapshot header '{header}'")));
    }
    let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|e| LabError::Parse(e.to_string()));
    let parse_u = |s: &str| s.trim().parse::<usize>().map_err(|e| LabError::Parse(e.to_string()));
    let grid = GridSpec::new(parse_u(parts[0])?, parse_f(parts[2])?, parse_u(parts[1])?)?;
    let t = parse_f(parts[3])?;
    let mut values = Vec::with_capacity(grid.len());
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (re, im) = line
            .split_once(',')
            .ok_or_else(|| LabError::Parse(format!("bad value line '{line}'")))?;
        values.push(Complex64::new(parse_f(re)?, parse_f(im)?));
    }
    Ok((ComplexField::from_values(&grid, values)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn wavenumbers_follow_dft_order() {
        let g = GridSpec::new(1, 2.0 * PI, 8).unwrap();
        let k = g.wavenumbers();
        let expected = [0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0];
        for (a, b) in k.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn spacing_in_2d() {
        let g = GridSpec::new(2, 40.0, 256).unwrap();
        assert_eq!(g.dx(), 0.15625);
        assert_eq!(g.len(), 65536);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(1, 2.0 * PI, 7).is_err());
        assert!(GridSpec::new(1, 0.0, 8).is_err());
        assert!(GridSpec::new(1, -1.0, 8).is_err());
        assert!(GridSpec::new(3, 1.0, 8).is_err());
        assert!(GridSpec::new(1, 1.0, 4).is_err());
    }

    #[test]
    fn plane_wave_derivatives() {
        let g = GridSpec::new(1, 2.0 * PI, 64).unwrap();
        let f = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, x[0]));
        let d = spectral_derivatives(&f).unwrap();
        for (idx, x) in g.positions().enumerate() {
            let e = Complex64::from_polar(1.0, x[0]);
            assert!((d.gradient[0].values()[idx] - c(0.0, 1.0) * e).norm() < 1e-12);
            assert!((d.laplacian.values()[idx] + e).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let g = GridSpec::new(2, 10.0, 16).unwrap();
        let f = ComplexField::from_fn(&g, |_| c(2.5, -1.0));
        let d = spectral_derivatives(&f).unwrap();
        assert!(d.laplacian.max_abs() < 1e-13);
        assert!(d.gradient.iter().all(|g| g.max_abs() < 1e-13));
    }

    #[test]
    fn gaussian_laplacian_matches_analytic() {
        let g = GridSpec::new(1, 40.0, 512).unwrap();
        let f = ComplexField::from_real(&g, |x| (-x[0] * x[0]).exp());
        let d = spectral_derivatives(&f).unwrap();
        for (idx, x) in g.positions().enumerate() {
            let exact = (4.0 * x[0] * x[0] - 2.0) * (-x[0] * x[0]).exp();
            assert!((d.laplacian.values()[idx].re - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_2d_laplacian() {
        let g = GridSpec::new(2, 20.0, 64).unwrap();
        let f = ComplexField::from_real(&g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let d = spectral_derivatives(&f).unwrap();
        for (idx, x) in g.positions().enumerate() {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let exact = (4.0 * r2 - 4.0) * (-r2).exp();
            assert!((d.laplacian.values()[idx].re - exact).abs() < 1e-9);
            let gx = -2.0 * x[0] * (-r2).exp();
            assert!((d.gradient[0].values()[idx].re - gx).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_field_norms() {
        let g = GridSpec::new(1, 10.0, 32).unwrap();
        let n = norm_suite(&ComplexField::zeros(&g));
        assert_eq!(n.l2, 0.0);
        assert_eq!(n.lp, 0.0);
        assert_eq!(n.h1, 0.0);
        assert_eq!(n.sigma, 0.0);
        assert_eq!(n.weighted_x, 0.0);
        assert_eq!(n.grad, 0.0);
    }

    #[test]
    fn quintic_ground_state_mass() {
        // Q = 3^{1/4} sech^{1/2}(2x): int Q^2 = sqrt(3) pi / 2.
        let g = GridSpec::new(1, 40.0, 1024).unwrap();
        let f = ComplexField::from_real(&g, |x| 3f64.powf(0.25) / (2.0 * x[0]).cosh().sqrt());
        let n = norm_suite(&f);
        assert!((n.l2 * n.l2 - 3f64.sqrt() * PI / 2.0).abs() < 1e-8);
        assert!((n.l2 * n.l2 - 2.720699).abs() < 1e-6);
    }

    #[test]
    fn gaussian_mass() {
        let g = GridSpec::new(1, 40.0, 512).unwrap();
        let f = ComplexField::from_real(&g, |x| (-x[0] * x[0] / 2.0).exp());
        assert!((f.norm_sq() - PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn inner_product_properties() {
        let g = GridSpec::new(1, 2.0 * PI, 64).unwrap();
        let e1 = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, x[0]));
        let e2 = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, 2.0 * x[0]));
        assert!(l2_inner(&e1, &e2).unwrap().norm() < 1e-12);
        let ff = l2_inner(&e1, &e1).unwrap();
        assert!(ff.im.abs() < 1e-14 && ff.re > 0.0);
        assert!((ff.re - e1.norm_sq()).abs() < 1e-12);

        let gq = GridSpec::new(1, 40.0, 256).unwrap();
        let q = ComplexField::from_real(&gq, |x| 1.0 / x[0].cosh());
        let xq = ComplexField::from_real(&gq, |x| x[0] / x[0].cosh());
        assert!(l2_inner(&q, &xq).unwrap().norm() < 1e-12);

        let other = ComplexField::zeros(&GridSpec::new(1, 2.0 * PI, 32).unwrap());
        assert!(matches!(l2_inner(&e1, &other), Err(LabError::GridMismatch)));
    }

    #[test]
    fn conjugate_linear_in_first_slot() {
        let g = GridSpec::new(1, 10.0, 32).unwrap();
        let f = ComplexField::from_fn(&g, |x| c((-x[0] * x[0]).exp(), 0.3 * x[0]));
        let h = ComplexField::from_fn(&g, |x| c(x[0].cos(), (-x[0].abs()).exp()));
        let a = c(0.4, 1.3);
        let lhs = l2_inner(&f.scale(a), &h).unwrap();
        let rhs = a.conj() * l2_inner(&f, &h).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn parseval_holds() {
        let g = GridSpec::new(2, 12.0, 32).unwrap();
        let f = ComplexField::from_fn(&g, |x| {
            c((-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp(), 0.2 * (-(x[0] - 1.0).powi(2)).exp())
        });
        let mut sp = Spectral::new(&g);
        let phys = f.norm_sq();
        let spec = sp.spectral_norm_sq(f.values());
        assert!(((phys - spec) / phys).abs() < 1e-12);
    }

    #[test]
    fn fourier_interpolation_reproduces_band_limited_field() {
        let g = GridSpec::new(1, 2.0 * PI, 32).unwrap();
        let f = ComplexField::from_fn(&g, |x| c((3.0 * x[0]).cos(), (2.0 * x[0]).sin()));
        let interp = FourierInterpolator::new(&f);
        let pts = vec![0.123, -2.5, 1.7];
        let vals = interp.eval_tensor(&[pts.clone()], OutsideBox::Periodic);
        for (x, v) in pts.iter().zip(vals) {
            assert!((v - c((3.0 * x).cos(), (2.0 * x).sin())).norm() < 1e-12);
        }
        let (v, gr, h) = interp.eval_point([0.4, 0.0]);
        assert!((v.re - (1.2f64).cos()).abs() < 1e-12);
        assert!((gr[0].re + 3.0 * (1.2f64).sin()).abs() < 1e-11);
        assert!((h[0][0].re + 9.0 * (1.2f64).cos()).abs() < 1e-10);
    }

    #[test]
    fn fourier_interpolation_2d() {
        let g = GridSpec::new(2, 2.0 * PI, 16).unwrap();
        let f = ComplexField::from_fn(&g, |x| c((x[0] + 2.0 * x[1]).cos(), x[1].sin()));
        let interp = FourierInterpolator::new(&f);
        let xs = vec![0.3, -1.1];
        let ys = vec![0.7, 2.0, -3.0];
        let vals = interp.eval_tensor(&[xs.clone(), ys.clone()], OutsideBox::Periodic);
        for (a, x) in xs.iter().enumerate() {
            for (b, y) in ys.iter().enumerate() {
                let exact = c((x + 2.0 * y).cos(), y.sin());
                assert!((vals[a * ys.len() + b] - exact).norm() < 1e-12);
            }
        }
        let (_, gr, h) = interp.eval_point([0.3, 0.7]);
        assert!((gr[1].re + 2.0 * (0.3f64 + 1.4).sin()).abs() < 1e-11);
        assert!((h[0][1].re + 2.0 * (0.3f64 + 1.4).cos()).abs() < 1e-10);
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let g = GridSpec::new(2, 7.5, 8).unwrap();
        let f = ComplexField::from_fn(&g, |x| c(x[0].sin() / 3.0, (x[1] * 0.1).exp()));
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &f, 0.1).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2,8,7.5000000000000000e0,"));
        let (back, t) = read_snapshot(&buf[..]).unwrap();
        assert_eq!(t, 0.1);
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = GridSpec::new(1, 1.0, 8).unwrap();
        let mut v = vec![c(0.0, 0.0); 8];
        v[3] = c(f64::NAN, 0.0);
        assert!(ComplexField::from_values(&g, v).is_err());
    }
}
