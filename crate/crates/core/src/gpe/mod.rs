//! Constrained minimization of the one- and two-component energies
//!
//! ```text
//! E(u1, u2) = Σ_i [ ∫|∇u_i|^2 + ∫V_i u_i^2 - (a_i/2) ∫u_i^4 ] + β ∫u1^2 u2^2
//! ```
//!
//! under `∫u_i^2 = 1`, with `V_i(x) = |x - x_i|^{p_i}`.

mod flow;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid2D, GridError, ScalarField};

pub use flow::SolverOptions;

#[derive(Debug, Error)]
pub enum GpeError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("gradient flow did not converge in {} iterations (residual {:.3e})", .best.iterations, .best.residual)]
    NotConverged { best: Box<SolveResult> },
    #[error("collapse detected at iteration {iteration}: ∫u^4 = {quartic:.4e} exceeds {bound:.4e}")]
    CollapseDetected { iteration: usize, quartic: f64, bound: f64 },
}

/// Power-law trap `V(x) = |x - center|^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSpec {
    pub center: [f64; 2],
    pub exponent: f64,
}

impl TrapSpec {
    pub fn new(center: [f64; 2], exponent: f64) -> Self {
        Self { center, exponent }
    }

    pub fn harmonic(center: [f64; 2]) -> Self {
        Self::new(center, 2.0)
    }

    pub fn validate(&self) -> Result<(), GpeError> {
        if !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return Err(GpeError::InvalidProblem(format!("trap exponent {} must be positive", self.exponent)));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(GpeError::InvalidProblem("trap center must be finite".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let r2 = (x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2);
        if self.exponent == 2.0 {
            r2
        } else {
            r2.powf(0.5 * self.exponent)
        }
    }

    pub fn sample(&self, grid: &Arc<Grid2D>) -> ScalarField {
        ScalarField::from_fn(grid.clone(), |x, y| self.eval([x, y]))
    }
}

/// Couplings and traps of the two-component problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub a1: f64,
    pub a2: f64,
    pub beta: f64,
    pub trap1: TrapSpec,
    pub trap2: TrapSpec,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), GpeError> {
        for (name, a) in [("a1", self.a1), ("a2", self.a2)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(GpeError::InvalidProblem(format!("{name} = {a} must be a finite non-negative number")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GpeError::InvalidProblem(format!("beta = {} must be non-negative", self.beta)));
        }
        self.trap1.validate()?;
        self.trap2.validate()
    }

    /// Relabels the two species.
    pub fn swapped(&self) -> Self {
        Self { a1: self.a2, a2: self.a1, beta: self.beta, trap1: self.trap2, trap2: self.trap1 }
    }

    pub fn couplings(&self) -> [f64; 2] {
        [self.a1, self.a2]
    }

    pub fn traps(&self) -> [TrapSpec; 2] {
        [self.trap1, self.trap2]
    }

    pub fn same_trap(&self) -> bool {
        self.trap1.center == self.trap2.center
    }
}

/// Both components on a common grid.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub u1: ScalarField,
    pub u2: ScalarField,
}

impl FieldPair {
    pub fn new(u1: ScalarField, u2: ScalarField) -> Result<Self, GpeError> {
        u1.check_same_grid(&u2)?;
        Ok(Self { u1, u2 })
    }

    pub fn swapped(&self) -> Self {
        Self { u1: self.u2.clone(), u2: self.u1.clone() }
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        self.u1.grid()
    }
}

/// Every quadrature entering the energy, kept separate so derived
/// quantities are re-summed from the same numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub kinetic: Vec<f64>,
    pub potential: Vec<f64>,
    pub quartic: Vec<f64>,
    pub couplings: Vec<f64>,
    pub beta: f64,
    /// `∫u1^2 u2^2` (zero for a single component).
    pub interaction: f64,
}

impl EnergyParts {
    /// `E^i = ∫|∇u_i|^2 + ∫V_i u_i^2 - (a_i/2)∫u_i^4`.
    pub fn component_energy(&self, i: usize) -> f64 {
        self.kinetic[i] + self.potential[i] - 0.5 * self.couplings[i] * self.quartic[i]
    }

    pub fn total(&self) -> f64 {
        (0..self.kinetic.len()).map(|i| self.component_energy(i)).sum::<f64>() + self.beta * self.interaction
    }

    /// `μ_i = E^i - (a_i/2)∫u_i^4 + β∫u1^2 u2^2` for normalized fields.
    pub fn multiplier(&self, i: usize) -> f64 {
        let cross = if self.kinetic.len() == 2 { self.beta * self.interaction } else { 0.0 };
        self.component_energy(i) - 0.5 * self.couplings[i] * self.quartic[i] + cross
    }
}

pub(crate) fn energy_parts(fields: &[&ScalarField], couplings: &[f64], traps: &[TrapSpec], beta: f64) -> EnergyParts {
    let grid = fields[0].grid();
    let mut kinetic = Vec::new();
    let mut potential = Vec::new();
    let mut quartic = Vec::new();
    for (u, trap) in fields.iter().zip(traps) {
        kinetic.push(u.gradient_sq_integral());
        let pot: f64 = u
            .values()
            .iter()
            .enumerate()
            .map(|(idx, v)| trap.eval(grid.point(idx)) * v * v)
            .sum::<f64>();
        potential.push(pot * grid.cell_area());
        quartic.push(u.quartic());
    }
    let interaction = if fields.len() == 2 { fields[0].overlap(fields[1]) } else { 0.0 };
    EnergyParts { kinetic, potential, quartic, couplings: couplings.to_vec(), beta, interaction }
}

/// Two-component energy.
pub fn energy(pair: &FieldPair, spec: &ProblemSpec) -> Result<f64, GpeError> {
    Ok(energy_breakdown(pair, spec)?.total())
}

pub fn energy_breakdown(pair: &FieldPair, spec: &ProblemSpec) -> Result<EnergyParts, GpeError> {
    pair.u1.check_same_grid(&pair.u2)?;
    Ok(energy_parts(&[&pair.u1, &pair.u2], &spec.couplings(), &spec.traps(), spec.beta))
}

/// One-component energy `∫|∇u|^2 + ∫Vu^2 - (a/2)∫u^4`.
pub fn energy_single(u: &ScalarField, a: f64, trap: &TrapSpec) -> f64 {
    energy_parts(&[u], &[a], &[*trap], 0.0).total()
}

/// Converged (or best) state of a gradient-flow run.
#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub fields: Vec<ScalarField>,
    pub energy: f64,
    pub component_energies: Vec<f64>,
    pub parts: EnergyParts,
    pub multipliers: Vec<f64>,
    /// `⟨H_i u_i, u_i⟩` evaluated with the physical-space Laplacian.
    pub rayleigh_quotients: Vec<f64>,
    pub multiplier_discrepancy: f64,
    /// Max-norm of the Euler–Lagrange defect on the support of the fields.
    pub residual: f64,
    /// `(iteration, residual)` checkpoints.
    pub residual_history: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
    /// Backtracking could no longer find a decrease above round-off.
    pub stalled: bool,
    pub final_dt: f64,
    /// Index of the seed that produced this result in a multi-start run.
    pub seed_index: usize,
}

impl SolveResult {
    pub fn interaction(&self) -> f64 {
        self.parts.interaction
    }

    pub fn pair(&self) -> Option<FieldPair> {
        match self.fields.as_slice() {
            [u1, u2] => Some(FieldPair { u1: u1.clone(), u2: u2.clone() }),
            _ => None,
        }
    }

    pub fn field(&self, i: usize) -> &ScalarField {
        &self.fields[i]
    }

    /// Turns a non-converged result into [`GpeError::NotConverged`].
    pub fn require_converged(self) -> Result<Self, GpeError> {
        if self.converged {
            Ok(self)
        } else {
            Err(GpeError::NotConverged { best: Box::new(self) })
        }
    }

    /// Whether the residual fell over the last `k` checkpoints. A soft
    /// diagnostic only: momentum makes the residual oscillate mildly.
    pub fn residual_tail_decreasing(&self, k: usize) -> bool {
        let h = &self.residual_history;
        let tail = &h[h.len().saturating_sub(k)..];
        tail.windows(2).all(|w| w[1].1 <= w[0].1)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// Unit-mass Gaussian `exp(-|x - c|^2/2)/√π` on the grid.
pub fn unit_gaussian(grid: &Arc<Grid2D>, center: [f64; 2]) -> ScalarField {
    let mut g = ScalarField::from_fn(grid.clone(), |x, y| {
        (-((x - center[0]).powi(2) + (y - center[1]).powi(2)) / 2.0).exp()
    });
    g.normalize();
    g
}

/// Default starting pair: Gaussians at the trap centers, pushed apart by
/// `±2h` along the first axis when the centers coincide.
pub fn default_seed(spec: &ProblemSpec, grid: &Arc<Grid2D>) -> FieldPair {
    let (mut c1, mut c2) = (spec.trap1.center, spec.trap2.center);
    if spec.same_trap() {
        let h = grid.spacing();
        c1[0] -= 2.0 * h;
        c2[0] += 2.0 * h;
    }
    FieldPair { u1: unit_gaussian(grid, c1), u2: unit_gaussian(grid, c2) }
}

/// Ground state of the single-component problem with coupling `a`.
pub fn minimize_single(
    a: f64,
    trap: &TrapSpec,
    grid: &Arc<Grid2D>,
    options: &SolverOptions,
) -> Result<SolveResult, GpeError> {
    trap.validate()?;
    if !(a >= 0.0 && a.is_finite()) {
        return Err(GpeError::InvalidProblem(format!("coupling {a} must be non-negative")));
    }
    let seed = match &options.initial {
        Some(init) if !init.is_empty() => init[0].clone(),
        _ => unit_gaussian(grid, trap.center),
    };
    seed.check_same_grid(&ScalarField::zeros(grid.clone()))?;
    flow::run(grid, &[a], &[*trap], 0.0, vec![seed], options)
}

/// Ground state of the coupled problem. With `multi_start` the symmetric
/// seed is tried alongside the default one and the lower energy is kept.
pub fn minimize_pair(spec: &ProblemSpec, grid: &Arc<Grid2D>, options: &SolverOptions) -> Result<SolveResult, GpeError> {
    spec.validate()?;
    let mut seeds = Vec::new();
    match &options.initial {
        Some(init) if init.len() == 2 => {
            init[0].check_same_grid(&init[1])?;
            seeds.push(FieldPair { u1: init[0].clone(), u2: init[1].clone() });
        }
        Some(init) if !init.is_empty() => {
            return Err(GpeError::InvalidProblem(format!("pair solve needs 2 initial fields, got {}", init.len())));
        }
        _ => seeds.push(default_seed(spec, grid)),
    }
    if options.multi_start {
        seeds.push(FieldPair {
            u1: unit_gaussian(grid, spec.trap1.center),
            u2: unit_gaussian(grid, spec.trap2.center),
        });
    }
    let mut best: Option<SolveResult> = None;
    for (k, seed) in seeds.into_iter().enumerate() {
        let mut r = flow::run(grid, &spec.couplings(), &spec.traps(), spec.beta, vec![seed.u1, seed.u2], options)?;
        r.seed_index = k;
        best = match best {
            Some(b) if b.energy <= r.energy => Some(b),
            _ => Some(r),
        };
    }
    Ok(best.expect("at least one seed"))
}

/// `(μ1, μ2)` from the closed-form multiplier expression.
pub fn extract_multipliers(result: &SolveResult, spec: &ProblemSpec) -> Result<(f64, f64), GpeError> {
    let pair = result
        .pair()
        .ok_or_else(|| GpeError::InvalidProblem("multipliers of a pair need two fields".into()))?;
    let parts = energy_breakdown(&pair, spec)?;
    Ok((parts.multiplier(0), parts.multiplier(1)))
}

/// Max-norm of `-Δu_i + V_i u_i - μ_i u_i - a_i u_i^3 + β u_j^2 u_i` over
/// the cells where `u_i > 1e-8 max u_i`, maximized over both components.
pub fn euler_lagrange_residual(pair: &FieldPair, spec: &ProblemSpec, multipliers: (f64, f64)) -> Result<f64, GpeError> {
    pair.u1.check_same_grid(&pair.u2)?;
    let fields = [&pair.u1, &pair.u2];
    let mu = [multipliers.0, multipliers.1];
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let r = component_residual(fields[i], Some(fields[1 - i]), spec.couplings()[i], &spec.traps()[i], spec.beta, mu[i]);
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Single-component analog of [`euler_lagrange_residual`].
pub fn euler_lagrange_residual_single(u: &ScalarField, a: f64, trap: &TrapSpec, mu: f64) -> f64 {
    component_residual(u, None, a, trap, 0.0, mu)
}

fn component_residual(u: &ScalarField, other: Option<&ScalarField>, a: f64, trap: &TrapSpec, beta: f64, mu: f64) -> f64 {
    let grid = u.grid();
    let lap = u.apply_laplacian();
    let cutoff = 1e-8 * u.max_value();
    let mut worst: f64 = 0.0;
    for (idx, (&v, &l)) in u.values().iter().zip(lap.values()).enumerate() {
        if v <= cutoff {
            continue;
        }
        let cross = other.map_or(0.0, |w| beta * w.values()[idx].powi(2) * v);
        let r = -l + trap.eval(grid.point(idx)) * v - mu * v - a * v * v * v + cross;
        worst = worst.max(r.abs());
    }
    worst
}
