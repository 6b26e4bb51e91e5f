//! Sweeps toward the critical coupling and the observables that test the
//! blow-up limit: scaling exponents, rescaled profiles, multipliers, peak
//! locations and the repulsion of peaks in a shared trap.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpe::{self, GpeError, ProblemSpec, SolveResult, SolverOptions, TrapSpec};
use crate::grid::{Grid2D, GridError, GridSpec, ScalarField};
use crate::par;
use crate::townes::{least_squares_line, RadialProfile};

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gpe(#[from] GpeError),
    #[error("field is identically zero")]
    ZeroField,
    #[error("only {cells:.2} grid cells span the rescaled core (need 8)")]
    UnderResolved { cells: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("need at least 3 points, got {0}")]
    InsufficientPoints(usize),
    #[error("tail unresolved: {0}")]
    TailUnresolved(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// `ε = (a* - a)^{1/(p+2)}`; NaN at or above `a*`.
pub fn blowup_scale(a_star: f64, a: f64, p: f64) -> f64 {
    if a < a_star {
        (a_star - a).powf(1.0 / (p + 2.0))
    } else {
        f64::NAN
    }
}

/// `ε̃ = (∫u^4)^{-1/2}`.
pub fn quartic_scale(quartic: f64) -> f64 {
    1.0 / quartic.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub location: [f64; 2],
    pub value: f64,
    pub count: usize,
    /// The 3x3 quadratic fit was not a proper maximum; `location` is the
    /// raw grid argmax.
    pub degenerate: bool,
}

/// Global maximum refined by a quadratic fit on the 3x3 stencil, plus the
/// number of separated local maxima above half the global maximum.
pub fn find_peak(field: &ScalarField) -> Result<Peak, AsymptoticsError> {
    let grid = field.grid();
    let n = grid.points_per_side();
    let h = grid.spacing();
    let v = field.values();
    let (imax, &vmax) = v
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, (k, x)| if *x > *best.1 { (k, x) } else { best });
    if !(vmax > 0.0) {
        return Err(AsymptoticsError::ZeroField);
    }
    let (i, j) = (imax / n, imax % n);
    let at = |i: usize, j: usize| v[(i % n) * n + (j % n)];
    let (ip, im, jp, jm) = (i + 1, i + n - 1, j + 1, j + n - 1);
    let f0 = at(i, j);
    let gx = (at(ip, j) - at(im, j)) / (2.0 * h);
    let gy = (at(i, jp) - at(i, jm)) / (2.0 * h);
    let hxx = (at(ip, j) - 2.0 * f0 + at(im, j)) / (h * h);
    let hyy = (at(i, jp) - 2.0 * f0 + at(i, jm)) / (h * h);
    let hxy = (at(ip, jp) - at(ip, jm) - at(im, jp) + at(im, jm)) / (4.0 * h * h);
    let det = hxx * hyy - hxy * hxy;
    let base = grid.point(imax);
    let mut peak = Peak { location: base, value: f0, count: 0, degenerate: true };
    if hxx < 0.0 && det > 0.0 {
        let dx = -(hyy * gx - hxy * gy) / det;
        let dy = -(hxx * gy - hxy * gx) / det;
        if dx.abs() <= h && dy.abs() <= h {
            peak.location = [base[0] + dx, base[1] + dy];
            peak.value = f0 + 0.5 * (gx * dx + gy * dy);
            peak.degenerate = false;
        }
    }

    // Cells not below any neighbour; plateaus of adjacent cells count once.
    let mut maxima: Vec<(usize, usize)> = Vec::new();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = v[i * n + j];
            if c <= 0.5 * vmax {
                continue;
            }
            let is_max = (0..3).all(|di| (0..3).all(|dj| v[(i + di - 1) * n + (j + dj - 1)] <= c));
            if is_max && !maxima.iter().any(|&(a, b)| a.abs_diff(i) <= 1 && b.abs_diff(j) <= 1) {
                maxima.push((i, j));
            }
        }
    }
    peak.count = maxima.len().max(1);
    Ok(peak)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit {
    pub lambda_fit: f64,
    /// `‖w̄ - w_λ‖_{H^1}` in rescaled variables.
    pub distance: f64,
    pub l2_distance: f64,
}

/// Compares `w̄(y) = ε u(εy + peak)` with `(λ/√a*) Q(λ|y|)`. The integrals
/// are evaluated in the original variables, where
/// `‖w̄ - w_λ‖^2_{H^1} = ∫D^2 + ε^2 ∫|∇D|^2` with
/// `D(x) = u(x) - (λ/(ε√a*)) Q(λ|x - peak|/ε)`.
pub fn rescaled_profile_distance(
    field: &ScalarField,
    eps: f64,
    peak: [f64; 2],
    profile: &RadialProfile,
) -> Result<ProfileFit, AsymptoticsError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(AsymptoticsError::DegenerateInput(format!("eps = {eps}")));
    }
    let grid = field.grid();
    let cells = 2.0 * eps / grid.spacing();
    if cells < 8.0 {
        return Err(AsymptoticsError::UnderResolved { cells });
    }
    let amp = 1.0 / (eps * profile.a_star().sqrt());
    let radii: Vec<f64> = (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            ((x[0] - peak[0]).powi(2) + (x[1] - peak[1]).powi(2)).sqrt() / eps
        })
        .collect();
    let diff = |lambda: f64| -> Vec<f64> {
        field
            .values()
            .iter()
            .zip(&radii)
            .map(|(u, r)| u - lambda * amp * profile.value_at(lambda * r))
            .collect()
    };
    let l2 = |lambda: f64| grid.cell_area() * diff(lambda).iter().map(|d| d * d).sum::<f64>();

    // Golden section in ln λ.
    let g = 0.5 * (5.0_f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.05_f64.ln(), 20.0_f64.ln());
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (l2(c.exp()), l2(d.exp()));
    for _ in 0..80 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = l2(c.exp());
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = l2(d.exp());
        }
    }
    let lambda_fit = (0.5 * (lo + hi)).exp();
    let dfield = ScalarField::new(grid.clone(), diff(lambda_fit))?;
    let l2sq = dfield.mass();
    let grad = dfield.gradient_sq_integral();
    Ok(ProfileFit { lambda_fit, distance: (l2sq + eps * eps * grad).sqrt(), l2_distance: l2sq.sqrt() })
}

/// Exponential decay rate of `w̄(y) = ε u(εy + peak)`, fitted as the slope
/// of `ln(|y|^{1/2} w̄)` against `|y|` over the annulus where `w̄` lies
/// between `1e-10` and `1e-3` of its peak. The `|y|^{1/2}` factor removes
/// the algebraic prefactor of a planar exponential tail.
pub fn decay_rate(field: &ScalarField, peak: [f64; 2], eps: f64) -> Result<f64, AsymptoticsError> {
    let grid = field.grid();
    let vmax = field.max_value();
    if !(vmax > 0.0) {
        return Err(AsymptoticsError::ZeroField);
    }
    let mut pts = Vec::new();
    for (k, &u) in field.values().iter().enumerate() {
        if u >= 1e-10 * vmax && u <= 1e-3 * vmax {
            let x = grid.point(k);
            let r = ((x[0] - peak[0]).powi(2) + (x[1] - peak[1]).powi(2)).sqrt() / eps;
            pts.push((r, (r.sqrt() * u).ln()));
        }
    }
    if pts.len() < 20 {
        return Err(AsymptoticsError::TailUnresolved(format!("{} samples in the fitting annulus", pts.len())));
    }
    let rmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let rmax = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    if (rmax - rmin) * eps < 4.0 * grid.spacing() {
        return Err(AsymptoticsError::TailUnresolved("annulus thinner than four cells".into()));
    }
    let (slope, _) = least_squares_line(&pts);
    Ok(-slope)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub log_prefactor: f64,
    pub r_squared: f64,
    /// Half-open index range of the points used.
    pub window: (usize, usize),
    /// `r_squared` reached the 0.98 gate.
    pub accepted: bool,
}

/// Least-squares line through `(ln x, ln y)` on `window` (all points when
/// `None`).
pub fn fit_power_law(xs: &[f64], ys: &[f64], window: Option<(usize, usize)>) -> Result<PowerLawFit, AsymptoticsError> {
    if xs.len() != ys.len() {
        return Err(AsymptoticsError::DegenerateInput("xs and ys differ in length".into()));
    }
    let (a, b) = window.unwrap_or((0, xs.len()));
    if b > xs.len() || a >= b {
        return Err(AsymptoticsError::DegenerateInput(format!("window {a}..{b} out of range")));
    }
    if b - a < 3 {
        return Err(AsymptoticsError::DegenerateInput(format!("{} points in window", b - a)));
    }
    let pts: Vec<(f64, f64)> = xs[a..b].iter().zip(&ys[a..b]).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(AsymptoticsError::DegenerateInput("non-positive or non-finite values".into()));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    if pts.iter().all(|p| (p.0 - mx).abs() < 1e-300) {
        return Err(AsymptoticsError::DegenerateInput("all abscissae coincide".into()));
    }
    let (slope, intercept) = least_squares_line(&pts);
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(PowerLawFit { exponent: slope, log_prefactor: intercept, r_squared, window: (a, b), accepted: r_squared >= 0.98 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LRegime {
    Zero,
    Finite,
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LThresholds {
    pub decreasing_below: f64,
    pub increasing_above: f64,
    pub points: usize,
}

impl Default for LThresholds {
    fn default() -> Self {
        Self { decreasing_below: 0.5, increasing_above: 2.0, points: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LClassification {
    pub values: Vec<f64>,
    /// Geometric mean of consecutive ratios over the trailing points.
    pub trend: f64,
    pub regime: LRegime,
    /// Last value when the regime is finite.
    pub estimate: Option<f64>,
}

/// Trend classification of a sequence of `e^{-δ0/ε1}/ε2^{p2}` values.
pub fn classify_l_values(values: &[f64], thresholds: &LThresholds) -> Result<LClassification, AsymptoticsError> {
    let k = thresholds.points.max(3);
    if values.len() < k {
        return Err(AsymptoticsError::InsufficientPoints(values.len()));
    }
    let tail = &values[values.len() - k..];
    if tail.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(AsymptoticsError::DegenerateInput("ratio values must be positive and finite".into()));
    }
    let log_sum: f64 = tail.windows(2).map(|w| (w[1] / w[0]).ln()).sum();
    let trend = (log_sum / (k - 1) as f64).exp();
    let regime = if trend < thresholds.decreasing_below {
        LRegime::Zero
    } else if trend > thresholds.increasing_above {
        LRegime::Infinite
    } else {
        LRegime::Finite
    };
    let estimate = (regime == LRegime::Finite).then(|| *tail.last().expect("non-empty"));
    Ok(LClassification { values: values.to_vec(), trend, regime, estimate })
}

/// Classifies `𝐋` from sweep records using `δ0 = δ |x1 - x2|`.
pub fn classify_l(records: &[SweepRecord], delta0: f64, thresholds: &LThresholds) -> Result<LClassification, AsymptoticsError> {
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let values: Vec<f64> = ok.iter().map(|r| (-delta0 / r.eps1).exp() / r.eps2.powf(r.p2)).collect();
    classify_l_values(&values, thresholds)
}

/// One point of a sweep. Derived columns are pure functions of the stored
/// primaries (see [`SweepRecord::rederive`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub index: usize,
    /// `ok`, `unconverged`, or `failed: <reason>`.
    pub status: String,
    pub a1: f64,
    pub a2: f64,
    pub beta: f64,
    pub p1: f64,
    pub p2: f64,
    pub a_star: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub quartic1: f64,
    pub quartic2: f64,
    pub eps_tilde1: f64,
    pub eps_tilde2: f64,
    pub e: f64,
    pub component_energy1: f64,
    pub component_energy2: f64,
    pub e1: f64,
    pub e2: f64,
    pub overlap: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub x_peak1: [f64; 2],
    pub x_peak2: [f64; 2],
    pub peak_value1: f64,
    pub peak_value2: f64,
    pub peak_count1: usize,
    pub peak_count2: usize,
    pub peak_flagged1: bool,
    pub peak_flagged2: bool,
    pub lambda_fit1: f64,
    pub lambda_fit2: f64,
    pub profile_dist1: f64,
    pub profile_dist2: f64,
    pub decay_rate1: f64,
    pub decay_rate2: f64,
    pub residual: f64,
    pub iterations: usize,
    pub under_resolved: bool,
    pub grid_half_width: f64,
    pub grid_points: usize,
}

impl SweepRecord {
    fn failed(index: usize, a: (f64, f64), template: &ProblemSpec, a_star: f64, reason: String) -> Self {
        let nan = f64::NAN;
        Self {
            index,
            status: format!("failed: {reason}"),
            a1: a.0,
            a2: a.1,
            beta: template.beta,
            p1: template.trap1.exponent,
            p2: template.trap2.exponent,
            a_star,
            eps1: blowup_scale(a_star, a.0, template.trap1.exponent),
            eps2: blowup_scale(a_star, a.1, template.trap2.exponent),
            quartic1: nan,
            quartic2: nan,
            eps_tilde1: nan,
            eps_tilde2: nan,
            e: nan,
            component_energy1: nan,
            component_energy2: nan,
            e1: nan,
            e2: nan,
            overlap: nan,
            mu1: nan,
            mu2: nan,
            x_peak1: [nan; 2],
            x_peak2: [nan; 2],
            peak_value1: nan,
            peak_value2: nan,
            peak_count1: 0,
            peak_count2: 0,
            peak_flagged1: false,
            peak_flagged2: false,
            lambda_fit1: nan,
            lambda_fit2: nan,
            profile_dist1: nan,
            profile_dist2: nan,
            decay_rate1: nan,
            decay_rate2: nan,
            residual: nan,
            iterations: 0,
            under_resolved: false,
            grid_half_width: nan,
            grid_points: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn is_failed(&self) -> bool {
        self.status.starts_with("failed")
    }

    /// `e - e1 - e2 - β∫u1^2 u2^2`; non-negative up to solver tolerance.
    pub fn sandwich_slack(&self) -> f64 {
        self.e - self.e1 - self.e2 - self.beta * self.overlap
    }

    /// Recomputes the derived columns from the primaries.
    pub fn rederive(&self) -> (f64, f64, f64, f64) {
        (
            blowup_scale(self.a_star, self.a1, self.p1),
            blowup_scale(self.a_star, self.a2, self.p2),
            quartic_scale(self.quartic1),
            quartic_scale(self.quartic2),
        )
    }

    pub fn csv_header() -> Vec<&'static str> {
        vec![
            "index", "status", "a1", "a2", "beta", "p1", "p2", "a_star", "eps1", "eps2", "quartic1", "quartic2",
            "eps_tilde1", "eps_tilde2", "e", "component_energy1", "component_energy2", "e1", "e2", "overlap", "mu1",
            "mu2", "x_peak1_x", "x_peak1_y", "x_peak2_x", "x_peak2_y", "peak_value1", "peak_value2", "peak_count1",
            "peak_count2", "peak_flagged1", "peak_flagged2", "lambda_fit1", "lambda_fit2", "profile_dist1",
            "profile_dist2", "decay_rate1", "decay_rate2", "residual", "iterations", "under_resolved",
            "grid_half_width", "grid_points",
        ]
    }

    /// Fields in [`csv_header`](Self::csv_header) order; floats use the
    /// supplied formatter.
    pub fn csv_fields(&self, fmt: impl Fn(f64) -> String) -> Vec<String> {
        let f = |x: f64| fmt(x);
        vec![
            self.index.to_string(),
            self.status.clone(),
            f(self.a1),
            f(self.a2),
            f(self.beta),
            f(self.p1),
            f(self.p2),
            f(self.a_star),
            f(self.eps1),
            f(self.eps2),
            f(self.quartic1),
            f(self.quartic2),
            f(self.eps_tilde1),
            f(self.eps_tilde2),
            f(self.e),
            f(self.component_energy1),
            f(self.component_energy2),
            f(self.e1),
            f(self.e2),
            f(self.overlap),
            f(self.mu1),
            f(self.mu2),
            f(self.x_peak1[0]),
            f(self.x_peak1[1]),
            f(self.x_peak2[0]),
            f(self.x_peak2[1]),
            f(self.peak_value1),
            f(self.peak_value2),
            self.peak_count1.to_string(),
            self.peak_count2.to_string(),
            self.peak_flagged1.to_string(),
            self.peak_flagged2.to_string(),
            f(self.lambda_fit1),
            f(self.lambda_fit2),
            f(self.profile_dist1),
            f(self.profile_dist2),
            f(self.decay_rate1),
            f(self.decay_rate2),
            f(self.residual),
            self.iterations.to_string(),
            self.under_resolved.to_string(),
            f(self.grid_half_width),
            self.grid_points.to_string(),
        ]
    }

    pub fn from_csv_fields(fields: &[&str]) -> Result<Self, AsymptoticsError> {
        let n = Self::csv_header().len();
        if fields.len() != n {
            return Err(AsymptoticsError::DegenerateInput(format!("expected {n} fields, got {}", fields.len())));
        }
        let bad = |k: usize| AsymptoticsError::DegenerateInput(format!("cannot parse column {k}: {:?}", fields[k]));
        let f = |k: usize| fields[k].trim().parse::<f64>().map_err(|_| bad(k));
        let u = |k: usize| fields[k].trim().parse::<usize>().map_err(|_| bad(k));
        let b = |k: usize| fields[k].trim().parse::<bool>().map_err(|_| bad(k));
        Ok(Self {
            index: u(0)?,
            status: fields[1].to_string(),
            a1: f(2)?,
            a2: f(3)?,
            beta: f(4)?,
            p1: f(5)?,
            p2: f(6)?,
            a_star: f(7)?,
            eps1: f(8)?,
            eps2: f(9)?,
            quartic1: f(10)?,
            quartic2: f(11)?,
            eps_tilde1: f(12)?,
            eps_tilde2: f(13)?,
            e: f(14)?,
            component_energy1: f(15)?,
            component_energy2: f(16)?,
            e1: f(17)?,
            e2: f(18)?,
            overlap: f(19)?,
            mu1: f(20)?,
            mu2: f(21)?,
            x_peak1: [f(22)?, f(23)?],
            x_peak2: [f(24)?, f(25)?],
            peak_value1: f(26)?,
            peak_value2: f(27)?,
            peak_count1: u(28)?,
            peak_count2: u(29)?,
            peak_flagged1: b(30)?,
            peak_flagged2: b(31)?,
            lambda_fit1: f(32)?,
            lambda_fit2: f(33)?,
            profile_dist1: f(34)?,
            profile_dist2: f(35)?,
            decay_rate1: f(36)?,
            decay_rate2: f(37)?,
            residual: f(38)?,
            iterations: u(39)?,
            under_resolved: b(40)?,
            grid_half_width: f(41)?,
            grid_points: u(42)?,
        })
    }
}

/// Grid used for each sweep point and how far it may be refined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridPolicy {
    pub base: GridSpec,
    /// Upper bound on points per side reached by doubling.
    pub max_points: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self { base: GridSpec::new(8.0, 256), max_points: 512 }
    }
}

/// Whether `2ε/λ >= 4h`, i.e. at least four cells across the predicted
/// core diameter. Couplings at or above `a*` are never adequate.
pub fn grid_adequate(a: f64, p: f64, spacing: f64, profile: &RadialProfile) -> bool {
    let eps = blowup_scale(profile.a_star(), a, p);
    eps.is_finite() && 2.0 * eps / profile.lambda_of(p) >= 4.0 * spacing
}

impl GridPolicy {
    /// Smallest refinement (doubling N at fixed L) meeting the adequacy rule
    /// for both components, capped at `max_points`. The flag is `true` when
    /// even the cap is inadequate.
    pub fn resolve(&self, spec: &ProblemSpec, profile: &RadialProfile) -> (GridSpec, bool) {
        let mut g = self.base;
        loop {
            let h = g.spacing();
            let ok = grid_adequate(spec.a1, spec.trap1.exponent, h, profile)
                && grid_adequate(spec.a2, spec.trap2.exponent, h, profile);
            if ok {
                return (g, false);
            }
            if g.points_per_side * 2 > self.max_points {
                return (g, true);
            }
            g.points_per_side *= 2;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Couplings `(a1, a2)` in absolute units, strictly approaching `a*`.
    pub schedule: Vec<(f64, f64)>,
    pub template: ProblemSpec,
    pub grid: GridPolicy,
    pub solver: SolverOptions,
    /// Worker threads for independent points (`0` = all, `1` = sequential).
    pub jobs: usize,
}

impl SweepConfig {
    pub fn validate(&self, a_star: f64) -> Result<(), AsymptoticsError> {
        if self.schedule.is_empty() {
            return Err(AsymptoticsError::InvalidSchedule("empty schedule".into()));
        }
        for w in self.schedule.windows(2) {
            if !(w[1].0 >= w[0].0 && w[1].1 >= w[0].1 && (w[1].0 > w[0].0 || w[1].1 > w[0].1)) {
                return Err(AsymptoticsError::InvalidSchedule(format!("{:?} does not increase after {:?}", w[1], w[0])));
            }
        }
        for &(a1, a2) in &self.schedule {
            if !(a1 >= 0.0 && a2 >= 0.0 && a1 < a_star && a2 < a_star) {
                return Err(AsymptoticsError::InvalidSchedule(format!("({a1}, {a2}) outside [0, a*)")));
            }
        }
        self.template.validate()?;
        self.grid.base.validate()?;
        self.solver.validate()?;
        Ok(())
    }
}

/// Solves every schedule point (single-component references and the
/// coupled problem) and extracts the record. Points are independent and
/// run in parallel; failures become records with a `failed` status.
pub fn run_sweep(config: &SweepConfig, profile: &RadialProfile) -> Result<Vec<SweepRecord>, AsymptoticsError> {
    let a_star = profile.a_star();
    config.validate(a_star)?;
    let records = par::map_indexed(&config.schedule, config.jobs, |k, &a| {
        match sweep_point(k, a, config, profile) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("sweep point {k} ({:.6}, {:.6}) failed: {e}", a.0, a.1);
                SweepRecord::failed(k, a, &config.template, a_star, e.to_string())
            }
        }
    });
    Ok(records)
}

fn sweep_point(
    index: usize,
    a: (f64, f64),
    config: &SweepConfig,
    profile: &RadialProfile,
) -> Result<SweepRecord, AsymptoticsError> {
    let a_star = profile.a_star();
    let spec = ProblemSpec { a1: a.0, a2: a.1, ..config.template };
    let (gspec, under_resolved) = config.grid.resolve(&spec, profile);
    let grid = gspec.build()?;
    let opts = &config.solver;
    let s1 = gpe::minimize_single(spec.a1, &spec.trap1, &grid, opts)?;
    let s2 = gpe::minimize_single(spec.a2, &spec.trap2, &grid, opts)?;
    let pair = gpe::minimize_pair(&spec, &grid, opts)?;
    record_from_results(index, &spec, &grid, profile, a_star, &pair, &s1, &s2, under_resolved)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn record_from_results(
    index: usize,
    spec: &ProblemSpec,
    grid: &Arc<Grid2D>,
    profile: &RadialProfile,
    a_star: f64,
    pair: &SolveResult,
    s1: &SolveResult,
    s2: &SolveResult,
    under_resolved: bool,
) -> Result<SweepRecord, AsymptoticsError> {
    let eps = [blowup_scale(a_star, spec.a1, spec.trap1.exponent), blowup_scale(a_star, spec.a2, spec.trap2.exponent)];
    let mut peaks = Vec::new();
    let mut fits = Vec::new();
    let mut rates = Vec::new();
    for i in 0..2 {
        let u = pair.field(i);
        let pk = find_peak(u)?;
        let fit = rescaled_profile_distance(u, eps[i], pk.location, profile).ok();
        let rate = decay_rate(u, pk.location, eps[i]).ok();
        peaks.push(pk);
        fits.push(fit);
        rates.push(rate);
    }
    let converged = pair.converged && s1.converged && s2.converged;
    let quartic = &pair.parts.quartic;
    Ok(SweepRecord {
        index,
        status: if converged { "ok".into() } else { "unconverged".into() },
        a1: spec.a1,
        a2: spec.a2,
        beta: spec.beta,
        p1: spec.trap1.exponent,
        p2: spec.trap2.exponent,
        a_star,
        eps1: eps[0],
        eps2: eps[1],
        quartic1: quartic[0],
        quartic2: quartic[1],
        eps_tilde1: quartic_scale(quartic[0]),
        eps_tilde2: quartic_scale(quartic[1]),
        e: pair.energy,
        component_energy1: pair.component_energies[0],
        component_energy2: pair.component_energies[1],
        e1: s1.energy,
        e2: s2.energy,
        overlap: pair.interaction(),
        mu1: pair.multipliers[0],
        mu2: pair.multipliers[1],
        x_peak1: peaks[0].location,
        x_peak2: peaks[1].location,
        peak_value1: peaks[0].value,
        peak_value2: peaks[1].value,
        peak_count1: peaks[0].count,
        peak_count2: peaks[1].count,
        peak_flagged1: peaks[0].degenerate,
        peak_flagged2: peaks[1].degenerate,
        lambda_fit1: fits[0].map_or(f64::NAN, |f| f.lambda_fit),
        lambda_fit2: fits[1].map_or(f64::NAN, |f| f.lambda_fit),
        profile_dist1: fits[0].map_or(f64::NAN, |f| f.distance),
        profile_dist2: fits[1].map_or(f64::NAN, |f| f.distance),
        decay_rate1: rates[0].unwrap_or(f64::NAN),
        decay_rate2: rates[1].unwrap_or(f64::NAN),
        residual: pair.residual.max(s1.residual).max(s2.residual),
        iterations: pair.iterations,
        under_resolved,
        grid_half_width: grid.half_width(),
        grid_points: grid.points_per_side(),
    })
}

/// Single-component sweep summary used for the energy scaling law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSweepPoint {
    pub a: f64,
    pub eps: f64,
    pub energy: f64,
    pub mu: f64,
    pub quartic: f64,
    pub peak: [f64; 2],
    pub peak_count: usize,
    pub lambda_fit: f64,
    pub profile_dist: f64,
    pub decay_rate: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Cold-started single-component solves along `couplings`.
pub fn run_single_sweep(
    couplings: &[f64],
    trap: &TrapSpec,
    grid: &Arc<Grid2D>,
    opts: &SolverOptions,
    profile: &RadialProfile,
    jobs: usize,
) -> Vec<Result<SingleSweepPoint, AsymptoticsError>> {
    par::map_indexed(couplings, jobs, |_, &a| {
        let r = gpe::minimize_single(a, trap, grid, opts)?;
        let eps = blowup_scale(profile.a_star(), a, trap.exponent);
        let u = r.field(0);
        let pk = find_peak(u)?;
        let fit = rescaled_profile_distance(u, eps, pk.location, profile).ok();
        Ok(SingleSweepPoint {
            a,
            eps,
            energy: r.energy,
            mu: r.multipliers[0],
            quartic: r.parts.quartic[0],
            peak: pk.location,
            peak_count: pk.count,
            lambda_fit: fit.map_or(f64::NAN, |f| f.lambda_fit),
            profile_dist: fit.map_or(f64::NAN, |f| f.distance),
            decay_rate: decay_rate(u, pk.location, eps).unwrap_or(f64::NAN),
            residual: r.residual,
            converged: r.converged,
        })
    })
}

/// `min / max` of `ε_i^2 ∫u_i^4` over all components and successful
/// points, folded into the largest `K` with every value in `[K, 1/K]`.
pub fn l4_sandwich_constant(records: &[SweepRecord]) -> f64 {
    let mut k = f64::INFINITY;
    for r in records.iter().filter(|r| !r.is_failed()) {
        for v in [r.eps1 * r.eps1 * r.quartic1, r.eps2 * r.eps2 * r.quartic2] {
            if v.is_finite() && v > 0.0 {
                k = k.min(v).min(1.0 / v);
            }
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem2Row {
    pub a1: f64,
    pub ratio1: f64,
    pub ratio2: f64,
    pub sandwich_slack: f64,
    pub overlap_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub rows: Vec<Theorem2Row>,
    pub ratio1_decreasing: bool,
    pub ratio1_final_below_half: bool,
    pub ratio2_checked: bool,
    pub ratio2_ok: bool,
    pub sandwich_ok: bool,
    pub failed_points: usize,
    pub passed: bool,
}

/// Peak-to-trap distances in units of `ε_i`, checked over the last three
/// points, and the interaction lower bound at every point.
pub fn theorem2_diagnostics(
    records: &[SweepRecord],
    template: &ProblemSpec,
    tolerance: f64,
    regime: Option<LRegime>,
) -> Theorem2Report {
    let x = [template.trap1.center, template.trap2.center];
    let dist = |p: [f64; 2], c: [f64; 2]| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| !r.is_failed()).collect();
    let rows: Vec<Theorem2Row> = ok
        .iter()
        .map(|r| {
            let slack = r.sandwich_slack();
            Theorem2Row {
                a1: r.a1,
                ratio1: dist(r.x_peak1, x[0]) / r.eps1,
                ratio2: dist(r.x_peak2, x[1]) / r.eps2,
                sandwich_slack: slack,
                overlap_ok: slack >= -10.0 * tolerance,
            }
        })
        .collect();
    let tail = |f: fn(&Theorem2Row) -> f64| -> Vec<f64> {
        rows[rows.len().saturating_sub(3)..].iter().map(f).collect()
    };
    let decreasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[1] < w[0]);
    let r1 = tail(|r| r.ratio1);
    let r2 = tail(|r| r.ratio2);
    let ratio1_decreasing = decreasing(&r1);
    let ratio1_final_below_half = r1.last().is_some_and(|v| *v < 0.5);
    let ratio2_checked = regime == Some(LRegime::Zero);
    let ratio2_ok = !ratio2_checked || (decreasing(&r2) && r2.last().is_some_and(|v| *v < 0.5));
    let sandwich_ok = rows.iter().all(|r| r.overlap_ok);
    let failed_points = records.len() - ok.len();
    let passed = ratio1_decreasing && ratio1_final_below_half && ratio2_ok && sandwich_ok && failed_points == 0;
    Theorem2Report {
        rows,
        ratio1_decreasing,
        ratio1_final_below_half,
        ratio2_checked,
        ratio2_ok,
        sandwich_ok,
        failed_points,
        passed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem3Row {
    pub a1: f64,
    pub separation: f64,
    pub sep1: f64,
    pub sep2: f64,
    pub drift1: f64,
    pub drift2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem3Report {
    pub rows: Vec<Theorem3Row>,
    /// `false` for `β = 0`, where no repulsion is expected.
    pub applicable: bool,
    pub separation_increasing: bool,
    /// Largest drift over all points and components (the empirical constant).
    pub drift_constant: f64,
    pub drift_bound: f64,
    pub drift_ok: bool,
    pub failed_points: usize,
    pub passed: bool,
}

/// Peak separation in units of `ε̃_i` and peak drift in units of
/// `ε̃_i |ln ε̃_i|` for a shared trap at `x0`. The absolute value keeps the
/// drift meaningful at mild couplings where `ε̃_i > 1`.
pub fn theorem3_diagnostics(records: &[SweepRecord], x0: [f64; 2], drift_bound: f64) -> Theorem3Report {
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| !r.is_failed()).collect();
    let applicable = ok.iter().all(|r| r.beta > 0.0) && !ok.is_empty();
    let dist = |p: [f64; 2], c: [f64; 2]| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
    let rows: Vec<Theorem3Row> = ok
        .iter()
        .map(|r| {
            let sep = dist(r.x_peak1, r.x_peak2);
            let drift = |p: [f64; 2], et: f64| dist(p, x0) / (et * et.ln().abs());
            Theorem3Row {
                a1: r.a1,
                separation: sep,
                sep1: sep / r.eps_tilde1,
                sep2: sep / r.eps_tilde2,
                drift1: drift(r.x_peak1, r.eps_tilde1),
                drift2: drift(r.x_peak2, r.eps_tilde2),
            }
        })
        .collect();
    let separation_increasing =
        rows.len() >= 2 && rows.windows(2).all(|w| w[1].sep1 > w[0].sep1 && w[1].sep2 > w[0].sep2);
    let drift_constant = rows
        .iter()
        .flat_map(|r| [r.drift1, r.drift2])
        .fold(0.0_f64, |m, d| if d.is_finite() && d >= 0.0 { m.max(d) } else { f64::INFINITY });
    let drift_ok = drift_constant <= drift_bound;
    let failed_points = records.len() - ok.len();
    let passed = applicable && separation_increasing && drift_ok && failed_points == 0;
    Theorem3Report {
        rows,
        applicable,
        separation_increasing,
        drift_constant,
        drift_bound,
        drift_ok,
        failed_points,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::townes::solve_townes;
    use std::sync::OnceLock;

    fn profile() -> &'static RadialProfile {
        static P: OnceLock<RadialProfile> = OnceLock::new();
        P.get_or_init(|| solve_townes(1e-10, 20.0).unwrap())
    }

    #[test]
    fn peak_of_sampled_profile() {
        let p = profile();
        let g = Grid2D::new(8.0, 256).unwrap();
        let c = [0.37, -0.81];
        let u = p.sample_to_grid(&g, 1.5, c).unwrap();
        let pk = find_peak(&u).unwrap();
        assert_eq!(pk.count, 1);
        assert!(!pk.degenerate);
        let h = g.spacing();
        assert!((pk.location[0] - c[0]).abs() < h / 2.0 && (pk.location[1] - c[1]).abs() < h / 2.0);
    }

    #[test]
    fn two_bumps_counted() {
        let g = Grid2D::new(8.0, 256).unwrap();
        let u = ScalarField::from_fn(g, |x, y| {
            (-((x - 3.0).powi(2) + y * y) / 2.0).exp() + (-((x + 3.0).powi(2) + y * y) / 2.0).exp()
        });
        assert_eq!(find_peak(&u).unwrap().count, 2);
        let z = ScalarField::zeros(Grid2D::new(8.0, 64).unwrap());
        assert!(matches!(find_peak(&z), Err(AsymptoticsError::ZeroField)));
    }

    #[test]
    fn profile_fit_recovers_synthetic_scale() {
        let p = profile();
        let g = Grid2D::new(8.0, 256).unwrap();
        let (eps, l0, c) = (0.6, 1.7, [0.2, -0.1]);
        // (λ0/√a*) Q(λ0 |x - c|/ε)/ε
        let u = p.sample_unnormalized(&g, l0 / eps, c).unwrap();
        let fit = rescaled_profile_distance(&u, eps, c, p).unwrap();
        assert!((fit.lambda_fit - l0).abs() < 1e-3, "{fit:?}");
        assert!(fit.distance < 1e-3, "{fit:?}");
        assert!(matches!(rescaled_profile_distance(&u, 0.1, c, p), Err(AsymptoticsError::UnderResolved { .. })));
    }

    #[test]
    fn decay_rates_of_sampled_profiles() {
        let p = profile();
        let g = Grid2D::new(16.0, 512).unwrap();
        let u = p.sample_to_grid(&g, 1.0, [0.0, 0.0]).unwrap();
        let d = decay_rate(&u, [0.0, 0.0], 1.0).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
        let u = p.sample_to_grid(&g, 1.6, [0.0, 0.0]).unwrap();
        let d = decay_rate(&u, [0.0, 0.0], 1.0).unwrap();
        assert!((d / 1.6 - 1.0).abs() < 0.05, "{d}");
    }

    #[test]
    fn power_law_exact_and_degenerate() {
        let xs = [0.1, 0.2, 0.4, 0.8];
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let f = fit_power_law(&xs, &ys, None).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(f.accepted);
        assert!(fit_power_law(&xs[..2], &ys[..2], None).is_err());
        assert!(fit_power_law(&[1.0, -1.0, 2.0], &[1.0, 1.0, 1.0], None).is_err());
        assert!(fit_power_law(&[2.0; 3], &[1.0, 2.0, 3.0], None).is_err());
        let w = fit_power_law(&xs, &ys, Some((1, 4))).unwrap();
        assert_eq!(w.window, (1, 4));
    }

    #[test]
    fn l_classification() {
        let th = LThresholds::default();
        // equal gaps: e^{-c/ε}/ε^p with ε halving
        let eps = [0.8, 0.4, 0.2, 0.1];
        let zero: Vec<f64> = eps.iter().map(|e: &f64| (-3.0 / e).exp() / e.powi(2)).collect();
        assert_eq!(classify_l_values(&zero, &th).unwrap().regime, LRegime::Zero);
        // ε2 = e^{-2δ0/ε1}
        let inf: Vec<f64> = eps.iter().map(|e: &f64| (-3.0 / e).exp() / (-6.0 / e).exp().powi(2)).collect();
        assert_eq!(classify_l_values(&inf, &th).unwrap().regime, LRegime::Infinite);
        let flat = [1.0, 1.1, 0.95, 1.0];
        let c = classify_l_values(&flat, &th).unwrap();
        assert_eq!(c.regime, LRegime::Finite);
        assert_eq!(c.estimate, Some(1.0));
        for v in [&zero, &inf] {
            let scaled: Vec<f64> = v.iter().map(|x| 7.5 * x).collect();
            assert_eq!(classify_l_values(&scaled, &th).unwrap().regime, classify_l_values(v, &th).unwrap().regime);
        }
        assert!(matches!(classify_l_values(&flat[..2], &th), Err(AsymptoticsError::InsufficientPoints(2))));
    }

    #[test]
    fn grid_policy_refines_by_doubling() {
        let p = profile();
        let spec = ProblemSpec {
            a1: 0.9999 * p.a_star(),
            a2: 0.5,
            beta: 1.0,
            trap1: TrapSpec::harmonic([-1.0, 0.0]),
            trap2: TrapSpec::harmonic([1.0, 0.0]),
        };
        let policy = GridPolicy { base: GridSpec::new(8.0, 64), max_points: 1024 };
        let (g, flagged) = policy.resolve(&spec, p);
        assert!(!flagged);
        assert!(g.points_per_side > 64 && g.half_width == 8.0);
        assert!(grid_adequate(spec.a1, 2.0, g.spacing(), p));
        let capped = GridPolicy { base: GridSpec::new(8.0, 64), max_points: 64 };
        assert!(capped.resolve(&spec, p).1);
    }

    #[test]
    fn harmonic_sweep_point() {
        let p = profile();
        let config = SweepConfig {
            schedule: vec![(0.0, 0.0)],
            template: ProblemSpec {
                a1: 0.0,
                a2: 0.0,
                beta: 0.0,
                trap1: TrapSpec::harmonic([-1.0, 0.0]),
                trap2: TrapSpec::harmonic([1.0, 0.0]),
            },
            grid: GridPolicy { base: GridSpec::new(8.0, 128), max_points: 128 },
            solver: SolverOptions::default(),
            jobs: 1,
        };
        let recs = run_sweep(&config, p).unwrap();
        let r = &recs[0];
        assert!(r.is_ok(), "{}", r.status);
        assert!((r.e - 4.0).abs() < 1e-6);
        let h = 8.0 / 64.0;
        assert!((r.x_peak1[0] + 1.0).abs() < h / 2.0 && r.x_peak1[1].abs() < h / 2.0);
        assert!((r.x_peak2[0] - 1.0).abs() < h / 2.0);
        assert_eq!(r.eps1, (p.a_star() - 0.0).powf(0.25));
        let (e1, e2, t1, t2) = r.rederive();
        assert_eq!((e1, e2, t1, t2), (r.eps1, r.eps2, r.eps_tilde1, r.eps_tilde2));
    }

    #[test]
    fn csv_fields_round_trip() {
        let p = profile();
        let t = ProblemSpec {
            a1: 0.0,
            a2: 0.0,
            beta: 1.0,
            trap1: TrapSpec::harmonic([0.0, 0.0]),
            trap2: TrapSpec::harmonic([0.0, 0.0]),
        };
        let r = SweepRecord::failed(3, (1.0, 2.0), &t, p.a_star(), "boom, with comma".into());
        let fields = r.csv_fields(|x| format!("{x:.16e}"));
        assert_eq!(fields.len(), SweepRecord::csv_header().len());
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        let back = SweepRecord::from_csv_fields(&refs).unwrap();
        assert_eq!(back.eps1, r.eps1);
        assert_eq!(back.status, r.status);
        assert!(back.is_failed());
    }

    #[test]
    fn schedule_validation() {
        let p = profile();
        let mut config = SweepConfig {
            schedule: vec![(1.0, 1.0), (0.5, 1.0)],
            template: ProblemSpec {
                a1: 0.0,
                a2: 0.0,
                beta: 1.0,
                trap1: TrapSpec::harmonic([0.0, 0.0]),
                trap2: TrapSpec::harmonic([0.0, 0.0]),
            },
            grid: GridPolicy::default(),
            solver: SolverOptions::default(),
            jobs: 1,
        };
        assert!(run_sweep(&config, p).is_err());
        config.schedule = vec![(1.0, 1.0), (12.0, 12.0)];
        assert!(run_sweep(&config, p).is_err());
    }
}
