//! Periodic square grid with FFT-based differentiation and quadrature.
//!
//! The plane is truncated to `[-L, L)^2` with `N` points per side. All fields
//! used in this crate decay exponentially, so the periodic trapezoid rule and
//! the spectral Laplacian are accurate to well below the solver tolerances as
//! long as the boundary amplitude stays negligible (see
//! [`ScalarField::boundary_ratio`]).

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

/// Errors raised by grid construction and field primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field has vanishing quartic integral")]
    ZeroField,
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Serializable description of a grid (half width and points per side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_width: f64,
    pub points_per_side: usize,
}

impl GridSpec {
    pub fn new(half_width: f64, points_per_side: usize) -> Self {
        Self { half_width, points_per_side }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_side as f64
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.points_per_side;
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(GridError::InvalidGrid(format!(
                "half width must be positive, got {}",
                self.half_width
            )));
        }
        if n < 32 || n % 2 != 0 {
            return Err(GridError::InvalidGrid(format!(
                "points per side must be even and >= 32, got {n}"
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<Grid2D>, GridError> {
        Grid2D::new(self.half_width, self.points_per_side)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { half_width: 12.0, points_per_side: 256 }
    }
}

/// Immutable computational domain. Shared between fields through `Arc`.
pub struct Grid2D {
    half_width: f64,
    n: usize,
    h: f64,
    coords: Vec<f64>,
    wavenumbers: Vec<f64>,
    k_squared: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid2D")
            .field("half_width", &self.half_width)
            .field("n", &self.n)
            .field("h", &self.h)
            .finish()
    }
}

impl Grid2D {
    pub fn new(half_width: f64, n: usize) -> Result<Arc<Self>, GridError> {
        GridSpec::new(half_width, n).validate()?;
        let h = 2.0 * half_width / n as f64;
        let coords = (0..n).map(|j| -half_width + j as f64 * h).collect();
        let dk = std::f64::consts::PI / half_width;
        let wavenumbers: Vec<f64> = (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
                m as f64 * dk
            })
            .collect();
        let mut k_squared = vec![0.0; n * n];
        for (i, kx) in wavenumbers.iter().enumerate() {
            for (j, ky) in wavenumbers.iter().enumerate() {
                k_squared[i * n + j] = kx * kx + ky * ky;
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(Arc::new(Self { half_width, n, h, coords, wavenumbers, k_squared, fwd, inv }))
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_side(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec::new(self.half_width, self.n)
    }

    /// Coordinates along one axis: `-L + j h`.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn k_squared(&self) -> &[f64] {
        &self.k_squared
    }

    /// Quadrature weight of a single cell.
    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        [self.coords[idx / self.n], self.coords[idx % self.n]]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p.iter().all(|c| c.is_finite() && *c >= -self.half_width && *c <= self.half_width)
    }

    pub fn same_as(&self, other: &Grid2D) -> bool {
        self.n == other.n && self.half_width == other.half_width
    }

    /// Unnormalized forward 2D transform of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.fwd);
        buf
    }

    /// Inverse 2D transform, scaled by `1/N^2`, returning the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, &self.inv);
        let scale = 1.0 / (self.n * self.n) as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        par::fft_rows(buf, n, fft);
        transpose_square(buf, n);
        par::fft_rows(buf, n, fft);
        transpose_square(buf, n);
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Real field sampled on a [`Grid2D`], row-major with the first coordinate
/// varying slowest.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid2D>,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.same_as(&other.grid) && self.values == other.values
    }
}

impl ScalarField {
    pub fn new(grid: Arc<Grid2D>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::InvalidGrid(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::InvalidGrid("non-finite sample".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid2D>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid2D>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid2D>, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.points_per_side();
        let xs = grid.coords();
        let mut values = Vec::with_capacity(n * n);
        for &x in xs {
            for &y in xs {
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: Arc<Grid2D>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_same_grid(&self, other: &ScalarField) -> Result<(), GridError> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(GridError::GridMismatch)
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.points_per_side() + j]
    }

    /// Periodic trapezoid rule `h^2 * sum(values)`.
    pub fn integrate(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    /// `∫ f g`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.grid.cell_area() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn mass(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn quartic(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().map(|v| v * v * v * v).sum::<f64>()
    }

    /// `∫ f^2 g^2`.
    pub fn overlap(&self, other: &ScalarField) -> f64 {
        self.grid.cell_area()
            * self.values.iter().zip(&other.values).map(|(a, b)| a * a * b * b).sum::<f64>()
    }

    /// `∫ f^2` evaluated in spectral space via Parseval.
    pub fn mass_spectral(&self) -> f64 {
        let spec = self.grid.forward(&self.values);
        let n2 = self.grid.len() as f64;
        self.grid.cell_area() * spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / n2
    }

    /// `∫ |∇f|^2` through Parseval on the spectral derivative.
    pub fn gradient_sq_integral(&self) -> f64 {
        let spec = self.grid.forward(&self.values);
        kinetic_from_spectrum(&self.grid, &spec)
    }

    /// Spectral Laplacian `Δf`.
    pub fn apply_laplacian(&self) -> ScalarField {
        let mut spec = self.grid.forward(&self.values);
        for (c, k2) in spec.iter_mut().zip(self.grid.k_squared()) {
            *c *= -k2;
        }
        let values = self.grid.inverse_real(spec);
        Self { grid: self.grid.clone(), values }
    }

    /// Spectral gradient components `(∂_1 f, ∂_2 f)`.
    pub fn gradient(&self) -> (ScalarField, ScalarField) {
        let n = self.grid.points_per_side();
        let spec = self.grid.forward(&self.values);
        let ks = self.grid.wavenumbers();
        let nyquist = n / 2;
        let mut d1 = spec.clone();
        let mut d2 = spec;
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let k1 = if i == nyquist { 0.0 } else { ks[i] };
                let k2 = if j == nyquist { 0.0 } else { ks[j] };
                d1[idx] *= Complex64::new(0.0, k1);
                d2[idx] *= Complex64::new(0.0, k2);
            }
        }
        (
            Self { grid: self.grid.clone(), values: self.grid.inverse_real(d1) },
            Self { grid: self.grid.clone(), values: self.grid.inverse_real(d2) },
        )
    }

    /// Gagliardo–Nirenberg quotient `∫|∇u|^2 ∫u^2 / ∫u^4`.
    pub fn gn_quotient(&self) -> Result<f64, GridError> {
        let q = self.quartic();
        if q < 1e-300 {
            return Err(GridError::ZeroField);
        }
        Ok(self.gradient_sq_integral() * self.mass() / q)
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// Rescale to unit mass; returns the mass before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let m = self.mass();
        if m > 0.0 {
            self.scale(1.0 / m.sqrt());
        }
        m
    }

    pub fn abs_in_place(&mut self) {
        self.values.iter_mut().for_each(|v| *v = v.abs());
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest amplitude on the outermost ring of cells relative to the
    /// peak amplitude. Small values mean the truncation to a periodic box is
    /// harmless.
    pub fn boundary_ratio(&self) -> f64 {
        let n = self.grid.points_per_side();
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let mut edge: f64 = 0.0;
        for k in 0..n {
            for idx in [k, (n - 1) * n + k, k * n, k * n + n - 1] {
                edge = edge.max(self.values[idx].abs());
            }
        }
        edge / peak
    }

    pub fn linear_combination(&self, a: f64, other: &ScalarField, b: f64) -> ScalarField {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self { grid: self.grid.clone(), values }
    }
}

pub(crate) fn kinetic_from_spectrum(grid: &Grid2D, spec: &[Complex64]) -> f64 {
    let n2 = grid.len() as f64;
    grid.cell_area() * spec.iter().zip(grid.k_squared()).map(|(c, k2)| k2 * c.norm_sqr()).sum::<f64>()
        / n2
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian(grid: &Arc<Grid2D>, width_sq: f64) -> ScalarField {
        ScalarField::from_fn(grid.clone(), |x, y| (-(x * x + y * y) / width_sq).exp())
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid2D::new(12.0, 31).is_err());
        assert!(Grid2D::new(12.0, 30).is_err());
        assert!(Grid2D::new(-1.0, 64).is_err());
        assert!(Grid2D::new(12.0, 64).is_ok());
    }

    #[test]
    fn wavenumber_table_is_symmetric() {
        let g = Grid2D::new(12.0, 64).unwrap();
        let ks = g.wavenumbers();
        assert_eq!(ks.len(), 64);
        let kmax = ks.iter().fold(0.0_f64, |m, k| m.max(k.abs()));
        assert!((kmax - PI / g.spacing()).abs() < 1e-12);
        for j in 1..32 {
            assert!((ks[j] + ks[64 - j]).abs() < 1e-12);
        }
        assert_eq!(g.spacing(), 24.0 / 64.0);
    }

    #[test]
    fn integrate_constant_zero() {
        let g = Grid2D::new(12.0, 64).unwrap();
        assert_eq!(ScalarField::zeros(g).integrate(), 0.0);
    }

    #[test]
    fn integrate_gaussians() {
        let g = Grid2D::new(12.0, 256).unwrap();
        let f = gaussian(&g, 2.0);
        assert!((f.integrate() / (2.0 * PI) - 1.0).abs() < 1e-10);
        let f = gaussian(&g, 1.0);
        assert!((f.integrate() / PI - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_of_constant_and_gaussian() {
        let g = Grid2D::new(12.0, 256).unwrap();
        assert!(ScalarField::constant(g.clone(), 3.0).gradient_sq_integral().abs() < 1e-20);
        let f = gaussian(&g, 2.0);
        assert!((f.gradient_sq_integral() / PI - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences_for_windowed_mode() {
        let k0 = 1.3;
        let sample = |n: usize| {
            let g = Grid2D::new(6.0, n).unwrap();
            ScalarField::from_fn(g, |x, y| (k0 * x).sin() * (-(x * x + y * y) / 2.0).exp())
        };
        // Second-order centred differences, periodic wrap.
        let centred = |f: &ScalarField| {
            let n = f.grid().points_per_side();
            let h = f.grid().spacing();
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let dx = (f.at((i + 1) % n, j) - f.at((i + n - 1) % n, j)) / (2.0 * h);
                    let dy = (f.at(i, (j + 1) % n) - f.at(i, (j + n - 1) % n)) / (2.0 * h);
                    acc += dx * dx + dy * dy;
                }
            }
            acc * h * h
        };
        let fd: Vec<f64> = [128, 256, 512].iter().map(|&n| centred(&sample(n))).collect();
        // Two Richardson passes remove the h^2 and h^4 terms.
        let r1 = (4.0 * fd[1] - fd[0]) / 3.0;
        let r2 = (4.0 * fd[2] - fd[1]) / 3.0;
        let oracle = (16.0 * r2 - r1) / 15.0;
        let spectral = sample(256).gradient_sq_integral();
        assert!((spectral / oracle - 1.0).abs() < 1e-6, "{spectral} vs {oracle}");
    }

    #[test]
    fn laplacian_of_gaussian() {
        let g = Grid2D::new(12.0, 256).unwrap();
        let f = gaussian(&g, 2.0);
        let lap = f.apply_laplacian();
        let exact = ScalarField::from_fn(g.clone(), |x, y| {
            let r2 = x * x + y * y;
            (r2 - 2.0) * (-r2 / 2.0).exp()
        });
        let err = lap.linear_combination(1.0, &exact, -1.0).max_abs();
        assert!(err < 1e-6, "{err}");
        let c = ScalarField::constant(g, 2.5).apply_laplacian();
        assert!(c.max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_is_linear() {
        let g = Grid2D::new(10.0, 64).unwrap();
        let f = gaussian(&g, 2.0);
        let h = ScalarField::from_fn(g.clone(), |x, y| ((x - 1.0).powi(2) + y * y).neg_exp());
        let lhs = f.linear_combination(2.0, &h, -0.7).apply_laplacian();
        let rhs = f.apply_laplacian().linear_combination(2.0, &h.apply_laplacian(), -0.7);
        assert!(lhs.linear_combination(1.0, &rhs, -1.0).max_abs() < 1e-13);
    }

    trait NegExp {
        fn neg_exp(self) -> f64;
    }
    impl NegExp for f64 {
        fn neg_exp(self) -> f64 {
            (-self).exp()
        }
    }

    #[test]
    fn gn_quotient_of_gaussian_and_scale_invariance() {
        let g = Grid2D::new(12.0, 256).unwrap();
        let f = gaussian(&g, 2.0);
        assert!((f.gn_quotient().unwrap() / (2.0 * PI) - 1.0).abs() < 1e-8);
        let f2 = ScalarField::from_fn(g.clone(), |x, y| (-(1.5f64.powi(2)) * (x * x + y * y) / 2.0).exp());
        assert!((f2.gn_quotient().unwrap() / f.gn_quotient().unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(ScalarField::zeros(g).gn_quotient(), Err(GridError::ZeroField));
    }

    #[test]
    fn parseval_and_doubled_resolution() {
        let g = Grid2D::new(12.0, 128).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x, y| (-(x - 0.5).powi(2) - 0.7 * y * y).exp() * (1.0 + 0.2 * x));
        assert!((f.mass() / f.mass_spectral() - 1.0).abs() < 1e-12);
        let g2 = Grid2D::new(12.0, 256).unwrap();
        let f2 = ScalarField::from_fn(g2, |x, y| (-(x - 0.5).powi(2) - 0.7 * y * y).exp() * (1.0 + 0.2 * x));
        assert!((f.integrate() / f2.integrate() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn spectral_gradient_components() {
        let g = Grid2D::new(12.0, 128).unwrap();
        let f = gaussian(&g, 2.0);
        let (d1, d2) = f.gradient();
        let e1 = ScalarField::from_fn(g.clone(), |x, y| -x * (-(x * x + y * y) / 2.0).exp());
        let e2 = ScalarField::from_fn(g.clone(), |x, y| -y * (-(x * x + y * y) / 2.0).exp());
        assert!(d1.linear_combination(1.0, &e1, -1.0).max_abs() < 1e-8);
        assert!(d2.linear_combination(1.0, &e2, -1.0).max_abs() < 1e-8);
    }
}
