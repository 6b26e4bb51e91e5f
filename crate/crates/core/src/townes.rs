//! Ground state `Q` of `-ΔQ + Q - Q^3 = 0` in the plane.
//!
//! `Q` is radial, so the PDE reduces to `Q'' + Q'/r - Q + Q^3 = 0` with
//! `Q'(0) = 0` and decay at infinity. The central value is found by
//! bisection shooting: a too-large `Q(0)` makes the trajectory cross zero, a
//! too-small one turns back up before decaying. Round-off makes every
//! trajectory eventually leave the separatrix, so the profile is kept only
//! where the two bracketing trajectories agree and is continued by the
//! asymptotic form `c r^{-1/2} e^{-r}` beyond that.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid2D, ScalarField};
use crate::ode;

pub const PROFILE_SCHEMA: &str = "blowup-townes/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TownesError {
    #[error("initial shooting bracket [{lo}, {hi}] does not straddle the ground state")]
    NoBracket { lo: f64, hi: f64 },
    #[error("bisection did not reach tolerance {tolerance} in {iterations} iterations (width {width})")]
    NotConverged { tolerance: f64, iterations: usize, width: f64 },
    #[error("invalid shooting parameters: {0}")]
    InvalidInput(String),
    #[error("sampling out of range: {0}")]
    OutOfRange(String),
}

/// Knobs for [`solve_townes_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TownesOptions {
    /// Target width of the final bisection bracket on `Q(0)`.
    pub tolerance: f64,
    /// Outer radius of the stored mesh.
    pub r_max: f64,
    /// Uniform radial mesh spacing (also the quadrature step).
    pub mesh_step: f64,
    pub max_bisections: usize,
}

impl Default for TownesOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, r_max: 20.0, mesh_step: 0.01, max_bisections: 200 }
    }
}

/// The radial ground state on a uniform mesh with its integral constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub schema: String,
    pub radii: Vec<f64>,
    pub q_values: Vec<f64>,
    pub q_prime: Vec<f64>,
    /// `a* = ∫ Q^2`.
    pub mass: f64,
    /// `∫ |∇Q|^2`.
    pub kinetic: f64,
    /// `∫ Q^4`.
    pub quartic: f64,
    pub central_value: f64,
    /// Coefficient `c` of the asymptotic tail `c r^{-1/2} e^{-r}`.
    pub tail_coeff: f64,
    /// First radius where the stored values come from the tail formula.
    pub tail_start: f64,
    /// Free least-squares slope of `ln(r^{1/2} Q)` on the fitted decade.
    pub tail_slope: f64,
    pub bisections: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shot {
    /// Crossed zero: central value too large.
    Over,
    /// Turned upward while positive: central value too small.
    Under,
    /// Reached the end still positive and decreasing.
    Undecided,
}

const SERIES_START: f64 = 1e-4;
const RTOL: f64 = 1e-13;
const ATOL: f64 = 1e-15;

fn rhs(r: f64, y: &[f64; 2]) -> [f64; 2] {
    [y[1], -y[1] / r + y[0] - y[0] * y[0] * y[0]]
}

fn series_start(q0: f64) -> [f64; 2] {
    let c = q0 - q0 * q0 * q0;
    let r = SERIES_START;
    [q0 + c * r * r / 4.0, c * r / 2.0]
}

fn classify(q0: f64, r_end: f64) -> Shot {
    let mut verdict = Shot::Undecided;
    ode::integrate_to_stops(
        &rhs,
        SERIES_START,
        series_start(q0),
        &[r_end],
        RTOL,
        ATOL,
        |_, _| {},
        |_, y| {
            if y[0] < 0.0 {
                verdict = Shot::Over;
                true
            } else if y[1] > 0.0 {
                verdict = Shot::Under;
                true
            } else {
                false
            }
        },
    );
    verdict
}

/// Samples the trajectory from `q0` on the mesh; entries after the
/// trajectory leaves the admissible region are `None`.
fn trajectory(q0: f64, radii: &[f64]) -> Vec<Option<[f64; 2]>> {
    let mut out = vec![None; radii.len()];
    out[0] = Some([q0, 0.0]);
    let stops = &radii[1..];
    // A halted integration never records the remaining stops.
    ode::integrate_to_stops(
        &rhs,
        SERIES_START,
        series_start(q0),
        stops,
        RTOL,
        ATOL,
        |i, y| out[i + 1] = Some(*y),
        |_, y| y[0] < 0.0 || y[1] > 0.0,
    );
    out
}

/// Shooting solve with default mesh (`r_max`, tolerance as given).
pub fn solve_townes(tolerance: f64, r_max: f64) -> Result<RadialProfile, TownesError> {
    solve_townes_with(&TownesOptions { tolerance, r_max, ..TownesOptions::default() })
}

pub fn solve_townes_with(opts: &TownesOptions) -> Result<RadialProfile, TownesError> {
    if !(opts.tolerance > 0.0 && opts.tolerance <= 1e-6) {
        return Err(TownesError::InvalidInput(format!("tolerance {} not in (0, 1e-6]", opts.tolerance)));
    }
    if !(opts.r_max >= 15.0) || !opts.r_max.is_finite() {
        return Err(TownesError::InvalidInput(format!("r_max {} must be >= 15", opts.r_max)));
    }
    if !(opts.mesh_step > 0.0 && opts.mesh_step <= 0.1) {
        return Err(TownesError::InvalidInput(format!("mesh step {} not in (0, 0.1]", opts.mesh_step)));
    }

    let (lo, hi, bisections) = bisect_central_value(opts)?;

    let mut m = (opts.r_max / opts.mesh_step).ceil() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    let dr = opts.r_max / m as f64;
    let radii: Vec<f64> = (0..=m).map(|j| j as f64 * dr).collect();

    let traj_lo = trajectory(lo, &radii);
    let traj_hi = trajectory(hi, &radii);
    let mid = 0.5 * (lo + hi);
    let traj = trajectory(mid, &radii);

    // Resolved while all three trajectories exist, lo/hi agree, and the
    // log-derivative still follows the decaying Bessel branch. Integration
    // error feeds the growing branch identically in every trajectory, so
    // only the last test catches it.
    let mut resolved = 0;
    for j in 0..=m {
        let r = radii[j];
        match (traj[j], traj_lo[j], traj_hi[j]) {
            (Some(y), Some(a), Some(b)) if (a[0] - b[0]).abs() <= 1e-7 * y[0] && y[0] > 0.0 => {
                if r >= 8.0 && (y[1] / y[0] + bessel_k(1.0, r) / bessel_k(0.0, r)).abs() > 1e-6 {
                    break;
                }
                resolved = j;
            }
            _ => break,
        }
    }
    // Back off a little so the fit window sits well inside the trusted part.
    let resolved = resolved.saturating_sub((0.5 / dr) as usize).max(1);
    let q_res = traj[resolved].map(|y| y[0]).unwrap_or(0.0);

    let mut window = Vec::new();
    for j in (1..=resolved).rev() {
        let y = traj[j].expect("resolved index");
        if y[0] > 10.0 * q_res {
            break;
        }
        window.push((radii[j], (y[0] * radii[j].sqrt()).ln()));
    }
    let (tail_slope, _) = least_squares_line(&window);
    // Past the join the equation is linear to round-off, so the profile is a
    // multiple of K_0; `tail_coeff` is the matching `c` in `c r^{-1/2} e^{-r}`.
    let r_join = radii[resolved];
    let k_scale = q_res / bessel_k(0.0, r_join);
    let tail_coeff = k_scale * (PI / 2.0).sqrt();

    let mut q_values = Vec::with_capacity(m + 1);
    let mut q_prime = Vec::with_capacity(m + 1);
    for j in 0..=m {
        if j <= resolved {
            let y = traj[j].expect("resolved index");
            q_values.push(y[0]);
            q_prime.push(y[1]);
        } else {
            let r = radii[j];
            q_values.push(k_scale * bessel_k(0.0, r));
            q_prime.push(-k_scale * bessel_k(1.0, r));
        }
    }

    let mass = 2.0 * PI * simpson(dr, radii.iter().zip(&q_values).map(|(r, q)| r * q * q));
    let kinetic = 2.0 * PI * simpson(dr, radii.iter().zip(&q_prime).map(|(r, d)| r * d * d));
    let quartic = 2.0 * PI * simpson(dr, radii.iter().zip(&q_values).map(|(r, q)| r * q.powi(4)));

    Ok(RadialProfile {
        schema: PROFILE_SCHEMA.to_string(),
        radii,
        q_values,
        q_prime,
        mass,
        kinetic,
        quartic,
        central_value: mid,
        tail_coeff,
        tail_start: (resolved + 1) as f64 * dr,
        tail_slope,
        bisections,
    })
}

fn bisect_central_value(opts: &TownesOptions) -> Result<(f64, f64, usize), TownesError> {
    let r_end = opts.r_max;
    let (mut lo, mut hi) = (2.0, 2.5);
    let mut widened = 0;
    loop {
        let lo_ok = classify(lo, r_end) == Shot::Under;
        let hi_ok = classify(hi, r_end) == Shot::Over;
        if lo_ok && hi_ok {
            break;
        }
        if widened >= 4 {
            return Err(TownesError::NoBracket { lo, hi });
        }
        if !lo_ok {
            lo = 1.0 + 0.5 * (lo - 1.0);
        }
        if !hi_ok {
            hi += 0.5;
        }
        widened += 1;
    }
    for it in 1..=opts.max_bisections {
        let mid = 0.5 * (lo + hi);
        // Keep halving past the tolerance: the width of the bracket decides
        // how far out the shooting profile can be trusted.
        if mid <= lo || mid >= hi {
            return Ok((lo, hi, it - 1));
        }
        match classify(mid, r_end) {
            Shot::Over => hi = mid,
            Shot::Under => lo = mid,
            // Stayed on the separatrix all the way out; accept it.
            Shot::Undecided => return Ok((mid, mid, it)),
        }
    }
    if hi - lo <= opts.tolerance {
        Ok((lo, hi, opts.max_bisections))
    } else {
        Err(TownesError::NotConverged {
            tolerance: opts.tolerance,
            iterations: opts.max_bisections,
            width: hi - lo,
        })
    }
}

/// Modified Bessel function `K_nu(r)` for `r > 0` from
/// `∫_0^∞ exp(-r cosh t) cosh(nu t) dt`. The integrand decays doubly
/// exponentially, so the plain trapezoid rule is spectrally accurate.
pub(crate) fn bessel_k(nu: f64, r: f64) -> f64 {
    let dt: f64 = 0.05;
    let mut sum = 0.5 * (-r).exp();
    let mut t = dt;
    loop {
        let term = (-r * t.cosh()).exp() * (nu * t).cosh();
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
        t += dt;
    }
    sum * dt
}

/// Composite Simpson rule on a uniform mesh with an even number of
/// intervals.
pub(crate) fn simpson(dx: f64, values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    debug_assert!(n >= 3 && n % 2 == 1);
    let mut sum = 0.0;
    for (j, v) in values.enumerate() {
        let w = if j == 0 || j == n - 1 {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * v;
    }
    sum * dx / 3.0
}

/// Ordinary least squares `y = slope * x + intercept`.
pub(crate) fn least_squares_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

impl RadialProfile {
    /// `a* = ‖Q‖_2^2`.
    pub fn a_star(&self) -> f64 {
        self.mass
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().expect("non-empty mesh")
    }

    pub fn mesh_step(&self) -> f64 {
        self.radii[1] - self.radii[0]
    }

    /// `Q(r)` by monotone cubic Hermite interpolation on the mesh and the
    /// asymptotic tail beyond it.
    pub fn value_at(&self, r: f64) -> f64 {
        let r = r.abs();
        let r_max = self.r_max();
        if r >= r_max {
            return self.tail(r);
        }
        let dr = self.mesh_step();
        let j = ((r / dr) as usize).min(self.radii.len() - 2);
        let (q0, q1) = (self.q_values[j], self.q_values[j + 1]);
        let (mut d0, mut d1) = (self.q_prime[j], self.q_prime[j + 1]);
        let secant = (q1 - q0) / dr;
        if secant == 0.0 {
            d0 = 0.0;
            d1 = 0.0;
        } else {
            // Fritsch–Carlson limiter keeps each cell monotone.
            let (a, b) = (d0 / secant, d1 / secant);
            if a < 0.0 {
                d0 = 0.0;
            }
            if b < 0.0 {
                d1 = 0.0;
            }
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                d0 = tau * a * secant;
                d1 = tau * b * secant;
            }
        }
        let t = (r - self.radii[j]) / dr;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * q0 + h10 * dr * d0 + h01 * q1 + h11 * dr * d1
    }

    fn tail(&self, r: f64) -> f64 {
        self.tail_coeff * (-r).exp() / r.sqrt() * (1.0 - 0.125 / r)
    }

    /// `m_p = ∫ |x|^p Q^2 dx` by radial Simpson quadrature.
    pub fn moment(&self, p: f64) -> f64 {
        assert!(p >= 0.0, "moment exponent must be non-negative");
        let dr = self.mesh_step();
        2.0 * PI
            * simpson(
                dr,
                self.radii.iter().zip(&self.q_values).map(|(r, q)| r.powf(p + 1.0) * q * q),
            )
    }

    /// `λ(p) = ((p/2) m_p)^{1/(p+2)}`: width of the blow-up profile in a
    /// `|x|^p` trap.
    pub fn lambda_of(&self, p: f64) -> f64 {
        assert!(p > 0.0, "lambda requires p > 0");
        (0.5 * p * self.moment(p)).powf(1.0 / (p + 2.0))
    }

    /// Limit of `e(a)/(a*-a)^{p/(p+2)}` for a single component in a
    /// `|x|^p` trap: `(2/a*) ((p/2) m_p)^{2/(p+2)}`.
    pub fn energy_constant(&self, p: f64) -> f64 {
        2.0 / self.a_star() * self.lambda_of(p).powi(2)
    }

    /// `(λ/√a*) Q(λ|x - center|)` on `grid`, renormalized to unit mass.
    pub fn sample_to_grid(&self, grid: &Arc<Grid2D>, scale: f64, center: [f64; 2]) -> Result<ScalarField, TownesError> {
        let mut field = self.sample_unnormalized(grid, scale, center)?;
        field.normalize();
        Ok(field)
    }

    /// Same as [`sample_to_grid`](Self::sample_to_grid) without the final
    /// renormalization.
    pub fn sample_unnormalized(
        &self,
        grid: &Arc<Grid2D>,
        scale: f64,
        center: [f64; 2],
    ) -> Result<ScalarField, TownesError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(TownesError::OutOfRange(format!("scale {scale} must be positive")));
        }
        if !grid.contains(center) {
            return Err(TownesError::OutOfRange(format!("center {center:?} outside the grid")));
        }
        let diag = 2.0 * grid.half_width() * std::f64::consts::SQRT_2;
        if scale * diag > self.r_max() && !(self.tail_coeff > 0.0 && self.tail_coeff.is_finite()) {
            return Err(TownesError::OutOfRange(format!(
                "scaled diagonal {} exceeds the mesh and no tail is available",
                scale * diag
            )));
        }
        let amp = scale / self.a_star().sqrt();
        Ok(ScalarField::from_fn(grid.clone(), |x, y| {
            let r = ((x - center[0]).powi(2) + (y - center[1]).powi(2)).sqrt();
            amp * self.value_at(scale * r)
        }))
    }

    /// Relative residuals of `∫|∇Q|^2 = ∫Q^2 = ½∫Q^4`.
    pub fn identity_residuals(&self) -> (f64, f64) {
        ((self.kinetic / self.mass - 1.0).abs(), (self.quartic / (2.0 * self.mass) - 1.0).abs())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self, TownesError> {
        let p: RadialProfile =
            serde_json::from_str(text).map_err(|e| TownesError::InvalidInput(format!("profile json: {e}")))?;
        if p.schema != PROFILE_SCHEMA {
            return Err(TownesError::InvalidInput(format!("unsupported profile schema {}", p.schema)));
        }
        if p.radii.len() < 3 || p.radii.len() != p.q_values.len() || p.radii.len() != p.q_prime.len() {
            return Err(TownesError::InvalidInput("inconsistent mesh lengths".into()));
        }
        Ok(p)
    }
}
