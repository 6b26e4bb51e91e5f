//! Explicit trial states built from the Townes profile, and the scalar
//! optimization behind the logarithmic lower bound.
//!
//! A trial component is
//!
//! ```text
//! φ_i(x) = A_i (τ/√a*) φ((x - c_i)/R) Q(τ|x - c_i|),   c_i = x̄_i ∓ C0 (ln τ/τ) n
//! ```
//!
//! with a smooth cutoff `φ` equal to 1 on the unit disc and 0 outside the
//! disc of radius 2, and `A_i` fixing unit mass on the grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpe::{self, FieldPair, GpeError, ProblemSpec, TrapSpec};
use crate::grid::{Grid2D, GridError, ScalarField};
use crate::townes::{simpson, RadialProfile};

#[derive(Debug, Error)]
pub enum TrialError {
    #[error("invalid trial parameters: {0}")]
    InvalidParams(String),
    #[error("grid spacing {h} cannot resolve a core of width 1/{tau} (need 1/tau >= 4h)")]
    UnderResolved { tau: f64, h: f64 },
    #[error("minimizer s1 = {s1:.6} is not above e^3; the coupling is too far from critical")]
    OutOfRegime { s1: f64 },
    #[error("f'' = {second:.3e} <= 0 at Newton iterate s = {s}")]
    NotConvex { s: f64, second: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gpe(#[from] GpeError),
}

fn bump(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth radial cutoff: 1 for `r <= 1`, 0 for `r >= 2`, `C^∞` in between.
pub fn cutoff(r: f64) -> f64 {
    let inner = bump(2.0 - r);
    let outer = bump(r - 1.0);
    if inner + outer == 0.0 {
        return 0.0;
    }
    inner / (inner + outer)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub tau: f64,
    /// Cutoff radius `R`.
    pub r_cut: f64,
    pub c0: f64,
    pub direction: [f64; 2],
    /// Anchor points `x̄_1, x̄_2`.
    pub centers: [[f64; 2]; 2],
}

impl TrialParams {
    pub fn new(tau: f64, r_cut: f64, centers: [[f64; 2]; 2]) -> Self {
        Self { tau, r_cut, c0: 3.0, direction: [1.0, 0.0], centers }
    }

    /// `(1/a*) ∫ φ^2(x/(τR)) Q^2 dx`, i.e. `A^{-2}` before discretization.
    pub fn radial_mass_fraction(&self, profile: &RadialProfile) -> f64 {
        let tr = self.tau * self.r_cut;
        let dr = profile.mesh_step();
        let mut m = (2.0 * tr / dr).ceil() as usize;
        m += m % 2;
        let step = 2.0 * tr / m as f64;
        let vals: Vec<f64> = (0..=m)
            .map(|j| {
                let r = j as f64 * step;
                r * (cutoff(r / tr) * profile.value_at(r)).powi(2)
            })
            .collect();
        2.0 * std::f64::consts::PI * simpson(step, vals.into_iter()) / profile.a_star()
    }

    pub fn validate(&self, profile: &RadialProfile) -> Result<(), TrialError> {
        let bad = |m: String| Err(TrialError::InvalidParams(m));
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must exceed 1", self.tau));
        }
        if !(self.r_cut > 0.0 && self.r_cut.is_finite()) {
            return bad(format!("cutoff radius {} must be positive", self.r_cut));
        }
        if !(self.c0 > 1.0) {
            return bad(format!("C0 = {} must exceed 1", self.c0));
        }
        let norm = self.direction[0].hypot(self.direction[1]);
        if (norm - 1.0).abs() > 1e-12 {
            return bad(format!("direction has length {norm}"));
        }
        let defect = (1.0 / self.radial_mass_fraction(profile) - 1.0).abs();
        if defect >= 1e-8 {
            return bad(format!("tau R = {} too small: normalization defect {defect:.2e}", self.tau * self.r_cut));
        }
        Ok(())
    }

    /// Displaced centers `c_1 = x̄_1 + s n`, `c_2 = x̄_2 - s n` with
    /// `s = C0 ln τ / τ`.
    pub fn shifted_centers(&self) -> [[f64; 2]; 2] {
        let s = self.c0 * self.tau.ln() / self.tau;
        let [x1, x2] = self.centers;
        let n = self.direction;
        [[x1[0] + s * n[0], x1[1] + s * n[1]], [x2[0] - s * n[0], x2[1] - s * n[1]]]
    }
}

/// One cut-off, rescaled copy of `Q` at `center`, normalized on the grid.
/// Returns the field and its amplitude factor `A`.
pub fn trial_component(
    profile: &RadialProfile,
    grid: &Arc<Grid2D>,
    tau: f64,
    r_cut: f64,
    center: [f64; 2],
) -> Result<(ScalarField, f64), TrialError> {
    let h = grid.spacing();
    if 1.0 / tau < 4.0 * h {
        return Err(TrialError::UnderResolved { tau, h });
    }
    let amp = tau / profile.a_star().sqrt();
    let mut f = ScalarField::from_fn(grid.clone(), |x, y| {
        let r = ((x - center[0]).powi(2) + (y - center[1]).powi(2)).sqrt();
        let c = cutoff(r / r_cut);
        if c == 0.0 {
            0.0
        } else {
            amp * c * profile.value_at(tau * r)
        }
    });
    let mass = f.normalize();
    if !(mass > 0.0) {
        return Err(TrialError::Grid(GridError::ZeroField));
    }
    Ok((f, 1.0 / mass.sqrt()))
}

#[derive(Debug, Clone)]
pub struct TrialPair {
    pub pair: FieldPair,
    pub amplitudes: [f64; 2],
    pub centers: [[f64; 2]; 2],
}

pub fn build_trial_pair(
    params: &TrialParams,
    profile: &RadialProfile,
    grid: &Arc<Grid2D>,
) -> Result<TrialPair, TrialError> {
    params.validate(profile)?;
    let centers = params.shifted_centers();
    let (u1, a1) = trial_component(profile, grid, params.tau, params.r_cut, centers[0])?;
    let (u2, a2) = trial_component(profile, grid, params.tau, params.r_cut, centers[1])?;
    Ok(TrialPair { pair: FieldPair::new(u1, u2)?, amplitudes: [a1, a2], centers })
}

/// Energy decomposition of one trial evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEnergy {
    pub tau: f64,
    pub kinetic: [f64; 2],
    pub potential: [f64; 2],
    pub quartic: [f64; 2],
    pub overlap: f64,
    pub component_energies: [f64; 2],
    pub total_energy: f64,
}

impl TrialEnergy {
    fn from_pair(tau: f64, pair: &FieldPair, spec: &ProblemSpec) -> Result<Self, TrialError> {
        let p = gpe::energy_breakdown(pair, spec)?;
        Ok(Self {
            tau,
            kinetic: [p.kinetic[0], p.kinetic[1]],
            potential: [p.potential[0], p.potential[1]],
            quartic: [p.quartic[0], p.quartic[1]],
            overlap: p.interaction,
            component_energies: [p.component_energy(0), p.component_energy(1)],
            total_energy: p.total(),
        })
    }

    /// CSV row `tau, kinetic, potential, quartic, overlap, total_energy`
    /// (sums over components).
    pub fn csv_row(&self) -> [f64; 6] {
        [
            self.tau,
            self.kinetic[0] + self.kinetic[1],
            self.potential[0] + self.potential[1],
            self.quartic[0] + self.quartic[1],
            self.overlap,
            self.total_energy,
        ]
    }
}

pub const TRIAL_CSV_HEADER: [&str; 6] = ["tau", "kinetic", "potential", "quartic", "overlap", "total_energy"];

/// Energy of the trial pair under `spec`.
pub fn trial_energy(
    params: &TrialParams,
    spec: &ProblemSpec,
    profile: &RadialProfile,
    grid: &Arc<Grid2D>,
) -> Result<TrialEnergy, TrialError> {
    let t = build_trial_pair(params, profile, grid)?;
    TrialEnergy::from_pair(params.tau, &t.pair, spec)
}

/// Set-up of the supercritical demonstration `E(φ_1, η)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnboundedSetup {
    pub a2: f64,
    pub beta: f64,
    pub trap1: TrapSpec,
    pub trap2: TrapSpec,
    /// Support center and radius of the fixed second component `η`.
    pub eta_center: [f64; 2],
    pub eta_radius: f64,
    pub r_cut: f64,
    pub c0: f64,
    pub taus: Vec<f64>,
}

impl Default for UnboundedSetup {
    fn default() -> Self {
        Self {
            a2: 0.0,
            beta: 1.0,
            trap1: TrapSpec::harmonic([0.0, 0.0]),
            trap2: TrapSpec::harmonic([0.5, 0.0]),
            eta_center: [0.5, 0.0],
            eta_radius: 0.5,
            r_cut: 1.0,
            c0: 3.0,
            taus: vec![10.0, 20.0, 40.0],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnboundedReport {
    pub a1: f64,
    pub points: Vec<TrialEnergy>,
    /// First ladder value dropped for lack of resolution.
    pub truncated_at: Option<f64>,
    pub strictly_decreasing: bool,
}

/// Evaluates `E(φ_1, η)` along the τ ladder for `a1 >= a*`. Ladder values
/// the grid cannot resolve end the ladder and are reported.
pub fn demonstrate_unbounded(
    a1: f64,
    setup: &UnboundedSetup,
    grid: &Arc<Grid2D>,
    profile: &RadialProfile,
) -> Result<UnboundedReport, TrialError> {
    if !(a1 >= profile.a_star()) {
        return Err(TrialError::InvalidParams(format!("a1 = {a1} is below a* = {}", profile.a_star())));
    }
    if setup.taus.is_empty() || setup.taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TrialError::InvalidParams("tau ladder must be non-empty and increasing".into()));
    }
    let spec = ProblemSpec { a1, a2: setup.a2, beta: setup.beta, trap1: setup.trap1, trap2: setup.trap2 };
    spec.validate()?;
    let mut eta = ScalarField::from_fn(grid.clone(), |x, y| {
        let r = ((x - setup.eta_center[0]).powi(2) + (y - setup.eta_center[1]).powi(2)).sqrt();
        cutoff(r / setup.eta_radius)
    });
    if eta.normalize() == 0.0 {
        return Err(TrialError::Grid(GridError::ZeroField));
    }
    let mut points = Vec::new();
    let mut truncated_at = None;
    for &tau in &setup.taus {
        let params = TrialParams {
            tau,
            r_cut: setup.r_cut,
            c0: setup.c0,
            direction: [1.0, 0.0],
            centers: [setup.trap1.center, setup.eta_center],
        };
        params.validate(profile)?;
        let center = params.shifted_centers()[0];
        match trial_component(profile, grid, tau, setup.r_cut, center) {
            Ok((phi, _)) => {
                let pair = FieldPair::new(phi, eta.clone())?;
                points.push(TrialEnergy::from_pair(tau, &pair, &spec)?);
            }
            Err(TrialError::UnderResolved { .. }) => {
                truncated_at = Some(tau);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let strictly_decreasing = points.windows(2).all(|w| w[1].total_energy < w[0].total_energy);
    Ok(UnboundedReport { a1, points, truncated_at, strictly_decreasing })
}

/// Scale `(a* - a)^{p/(p+2)} (ln 1/(a* - a))^{2p/(p+2)}` of the
/// logarithmic energy bounds.
pub fn log_bound_scale(gap: f64, p: f64) -> f64 {
    gap.powf(p / (p + 2.0)) * (1.0 / gap).ln().powf(2.0 * p / (p + 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpperBoundOptions {
    pub c0: f64,
    pub direction: [f64; 2],
    /// Cutoff radius; by default the largest that keeps both supports inside
    /// 90% of the box.
    pub r_cut: Option<f64>,
}

impl Default for UpperBoundOptions {
    fn default() -> Self {
        Self { c0: 3.0, direction: [1.0, 0.0], r_cut: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperBound {
    pub a1: f64,
    pub a2: f64,
    pub tau: f64,
    pub r_cut: f64,
    pub energy: TrialEnergy,
    /// `E / [(a*-a1)^{p/(p+2)} (ln 1/(a*-a1))^{2p/(p+2)}]`.
    pub bound_ratio: f64,
    /// `Σ_i ((a*-a_i)/a*) τ^2 + 3 C0^p |ln τ/τ|^p`.
    pub analytic_bound: f64,
}

/// Same-trap trial energy at `τ = (a*-a1)^{-1/(p+2)} (ln 1/(a*-a1))^{p/(p+2)}`.
#[allow(clippy::too_many_arguments)]
pub fn same_trap_upper_bound(
    a1: f64,
    a2: f64,
    p: f64,
    beta: f64,
    x0: [f64; 2],
    grid: &Arc<Grid2D>,
    profile: &RadialProfile,
    opts: &UpperBoundOptions,
) -> Result<UpperBound, TrialError> {
    let a_star = profile.a_star();
    for a in [a1, a2] {
        if !(a >= 0.0 && a < a_star) {
            return Err(TrialError::InvalidParams(format!("coupling {a} must lie in [0, a*)")));
        }
    }
    let gap = a_star - a1;
    if gap >= 1.0 {
        return Err(TrialError::InvalidParams(format!("a* - a1 = {gap} must be below 1 for the log scale")));
    }
    let tau = gap.powf(-1.0 / (p + 2.0)) * (1.0 / gap).ln().powf(p / (p + 2.0));
    let shift = opts.c0 * tau.ln() / tau;
    let r_cut = match opts.r_cut {
        Some(r) => r,
        None => {
            let room = grid.half_width() - x0[0].abs().max(x0[1].abs());
            (0.9 * room - shift) / 2.0
        }
    };
    let params = TrialParams { tau, r_cut, c0: opts.c0, direction: opts.direction, centers: [x0, x0] };
    let trap = TrapSpec::new(x0, p);
    let spec = ProblemSpec { a1, a2, beta, trap1: trap, trap2: trap };
    spec.validate()?;
    let energy = trial_energy(&params, &spec, profile, grid)?;
    let analytic_bound = ((a_star - a1) + (a_star - a2)) / a_star * tau * tau
        + 3.0 * opts.c0.powf(p) * (tau.ln() / tau).abs().powf(p);
    Ok(UpperBound {
        a1,
        a2,
        tau,
        r_cut,
        bound_ratio: energy.total_energy / log_bound_scale(gap, p),
        energy,
        analytic_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaAParams {
    pub kappa: f64,
    pub m: f64,
    pub p: f64,
    pub a: f64,
    pub a_star: f64,
}

impl LemmaAParams {
    pub fn validate(&self) -> Result<(), TrialError> {
        let ok = [self.kappa, self.m, self.p, self.a, self.a_star].iter().all(|v| v.is_finite() && *v > 0.0);
        if !ok || self.a >= self.a_star {
            return Err(TrialError::InvalidParams(format!("need positive kappa, m, p and 0 < a < a*: {self:?}")));
        }
        Ok(())
    }

    fn gap(&self) -> f64 {
        self.a_star - self.a
    }

    /// `f(s) = ((a*-a)/κ) s^2 + m |ln s / s|^p`.
    pub fn f(&self, s: f64) -> f64 {
        self.gap() / self.kappa * s * s + self.m * (s.ln() / s).abs().powf(self.p)
    }

    pub fn f_prime(&self, s: f64) -> f64 {
        let l = s.ln();
        2.0 * self.gap() / self.kappa * s + self.m * self.p * l.powf(self.p - 1.0) * (1.0 - l) / s.powf(self.p + 1.0)
    }

    pub fn f_second(&self, s: f64) -> f64 {
        let (l, p) = (s.ln(), self.p);
        let bracket = (p - 1.0) * (1.0 - l) - (p + 1.0) * l * (1.0 - l) - l;
        2.0 * self.gap() / self.kappa + self.m * p * l.powf(p - 2.0) * bracket / s.powf(p + 2.0)
    }

    /// Two-sided bracket `((mpκ/(c(a*-a)))^{1/(p+2)} (ln s)^{p/(p+2)}` for
    /// `c = 3` (lower) and `c = 2` (upper), evaluated at `s`.
    pub fn bracket_at(&self, s: f64) -> (f64, f64) {
        let (m, p, k) = (self.m, self.p, self.kappa);
        let tail = s.ln().powf(p / (p + 2.0));
        let side = |c: f64| (m * p * k / (c * self.gap())).powf(1.0 / (p + 2.0)) * tail;
        (side(3.0), side(2.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaAResult {
    pub s1: f64,
    pub f_min: f64,
    pub bracket: (f64, f64),
    pub bracket_holds: bool,
    /// `f(s1) / [(a*-a)^{p/(p+2)} (ln 1/(a*-a))^{2p/(p+2)}]`.
    pub bound_ratio: f64,
    pub iterations: usize,
}

/// Minimizes `f` on `(e^3, ∞)` by safeguarded Newton on `f' = 0`.
pub fn lemma_a_minimize(params: &LemmaAParams) -> Result<LemmaAResult, TrialError> {
    params.validate()?;
    let e3 = 3.0_f64.exp();
    let mut lo = e3;
    if params.f_prime(lo) >= 0.0 {
        return Err(TrialError::OutOfRegime { s1: lo });
    }
    let mut hi = 2.0 * lo;
    while params.f_prime(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(TrialError::InvalidParams("no sign change of f' found".into()));
        }
    }
    let mut s = 0.5 * (lo + hi);
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let d1 = params.f_prime(s);
        let d2 = params.f_second(s);
        if !(d2 > 0.0) {
            return Err(TrialError::NotConvex { s, second: d2 });
        }
        if d1 < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let mut next = s - d1 / d2;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - s).abs() <= 1e-15 * s || hi - lo <= 1e-15 * s;
        s = next;
        if done {
            break;
        }
    }
    if s <= e3 {
        return Err(TrialError::OutOfRegime { s1: s });
    }
    let bracket = params.bracket_at(s);
    let tol = 1e-12 * s;
    let bracket_holds = bracket.0 <= s + tol && s <= bracket.1 + tol;
    let f_min = params.f(s);
    Ok(LemmaAResult {
        s1: s,
        f_min,
        bracket,
        bracket_holds,
        bound_ratio: f_min / log_bound_scale(params.gap(), params.p),
        iterations,
    })
}
