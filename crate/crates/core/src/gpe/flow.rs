//! Normalized gradient flow shared by the one- and two-component solvers.
//!
//! Each step moves along the constrained gradient `g_i = H_i u_i - μ_i u_i`,
//! preconditioned by `(1 + dt|k|^2)^{-1}` (a backward-Euler step for the
//! Laplacian), adds heavy-ball momentum, and projects back with
//! `u <- u / ‖u‖`. A step is accepted only if the energy does not go up.
//! Energy differences are evaluated from the increments `δ_i = u_i' - u_i`
//! rather than by subtracting two totals, so the descent test stays
//! meaningful long after the totals agree to all printed digits.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{energy_parts, GpeError, SolveResult, TrapSpec};
use crate::grid::{kinetic_from_spectrum, Grid2D, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Initial flow step.
    pub dt0: f64,
    /// Max-norm bound on the Euler–Lagrange defect.
    pub tolerance: f64,
    /// Bound on `|ΔE| / (dt max(|E|, 1))` for the last accepted step.
    pub energy_rate_tolerance: f64,
    pub max_iterations: usize,
    /// Heavy-ball coefficient; `0` gives the plain flow.
    pub momentum: f64,
    /// Residual checkpoint spacing (iterations).
    pub checkpoint_every: usize,
    /// Also try the symmetric seed in pair solves and keep the lower energy.
    pub multi_start: bool,
    #[serde(skip)]
    pub initial: Option<Vec<ScalarField>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            dt0: 0.01,
            tolerance: 1e-6,
            energy_rate_tolerance: 1e-12,
            max_iterations: 40_000,
            momentum: 0.9,
            checkpoint_every: 50,
            multi_start: false,
            initial: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), GpeError> {
        let bad = |m: &str| Err(GpeError::InvalidProblem(m.to_string()));
        if !(self.dt0 > 0.0 && self.dt0.is_finite()) {
            return bad("dt0 must be positive");
        }
        if !(self.tolerance > 0.0) || !(self.energy_rate_tolerance > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.max_iterations == 0 || self.checkpoint_every == 0 {
            return bad("iteration counts must be positive");
        }
        Ok(())
    }
}

const MAX_BACKTRACKS: usize = 60;
const MIN_DT: f64 = 1e-10;

struct Component {
    a: f64,
    v: Vec<f64>,
    u: Vec<f64>,
    lap: Vec<f64>,
    momentum: Vec<f64>,
}

impl Component {
    fn refresh_laplacian(&mut self, grid: &Grid2D) {
        let mut spec = grid.forward(&self.u);
        for (c, k2) in spec.iter_mut().zip(grid.k_squared()) {
            *c *= -k2;
        }
        self.lap = grid.inverse_real(spec);
    }
}

fn normalize_abs(grid: &Grid2D, u: &mut [f64]) {
    u.iter_mut().for_each(|v| *v = v.abs());
    let m = grid.cell_area() * u.iter().map(|v| v * v).sum::<f64>();
    let s = 1.0 / m.sqrt();
    u.iter_mut().for_each(|v| *v *= s);
}

fn dot(grid: &Grid2D, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_area() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// A normalized trial point. `delta` is formed directly from the step rather
/// than as `next - u`, which would bury small steps under rounding noise.
struct Step {
    next: Vec<f64>,
    delta: Vec<f64>,
}

impl Step {
    fn new(grid: &Grid2D, u: &[f64], d: &[f64], dt: f64) -> Self {
        // |u + dt d|^2 = 1 + x, and s - 1 = (1 + x)^(-1/2) - 1 without cancellation.
        let x = (dot(grid, u, u) - 1.0) + 2.0 * dt * dot(grid, u, d) + dt * dt * dot(grid, d, d);
        let r = (1.0 + x).sqrt();
        let sm1 = -x / (r * (1.0 + r));
        let s = 1.0 + sm1;
        let delta: Vec<f64> = u.iter().zip(d).map(|(u, d)| sm1 * u + s * dt * d).collect();
        let next = u.iter().zip(&delta).map(|(u, d)| u + d).collect();
        Step { next, delta }
    }
}

fn precondition(grid: &Grid2D, g: &[f64], dt: f64) -> Vec<f64> {
    let mut spec = grid.forward(g);
    for (c, k2) in spec.iter_mut().zip(grid.k_squared()) {
        *c /= 1.0 + dt * k2;
    }
    grid.inverse_real(spec)
}

pub(super) fn run(
    grid: &Arc<Grid2D>,
    couplings: &[f64],
    traps: &[TrapSpec],
    beta: f64,
    seeds: Vec<ScalarField>,
    opts: &SolverOptions,
) -> Result<SolveResult, GpeError> {
    opts.validate()?;
    let n_comp = couplings.len();
    debug_assert!(n_comp == 1 || n_comp == 2);
    let area = grid.cell_area();
    let h = grid.spacing();
    let collapse_bound = 0.5 / (h * h);

    let mut comps: Vec<Component> = seeds
        .into_iter()
        .zip(couplings.iter().zip(traps))
        .map(|(seed, (&a, trap))| {
            let mut u = seed.into_values();
            normalize_abs(grid, &mut u);
            let v = trap.sample(grid).into_values();
            let mut c = Component { a, v, u, lap: Vec::new(), momentum: Vec::new() };
            c.refresh_laplacian(grid);
            c
        })
        .collect();
    if comps.iter().any(|c| !c.u.iter().all(|x| x.is_finite())) {
        return Err(GpeError::InvalidProblem("initial field is not finite".into()));
    }

    // The potential is integrated explicitly, so its largest value bounds dt.
    let v_max = comps.iter().flat_map(|c| c.v.iter()).fold(0.0_f64, |m, &v| m.max(v));
    let dt_max = if v_max > 0.0 { 1.9 / v_max } else { 1.0 };
    let mut dt = opts.dt0.min(dt_max);

    let mut history = Vec::new();
    let mut last_rate = f64::INFINITY;
    let mut stalled = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut residual;

    loop {
        // Constrained gradients.
        let mut grads = Vec::with_capacity(n_comp);
        let mut mus = Vec::with_capacity(n_comp);
        residual = 0.0_f64;
        for i in 0..n_comp {
            let c = &comps[i];
            let other = if n_comp == 2 { Some(&comps[1 - i].u) } else { None };
            let mut hu: Vec<f64> = (0..c.u.len())
                .map(|x| {
                    let u = c.u[x];
                    let cross = other.map_or(0.0, |w| beta * w[x] * w[x] * u);
                    -c.lap[x] + c.v[x] * u - c.a * u * u * u + cross
                })
                .collect();
            let mu = dot(grid, &hu, &c.u);
            let cutoff = 1e-8 * c.u.iter().fold(0.0_f64, |m, &v| m.max(v));
            for (x, g) in hu.iter_mut().enumerate() {
                *g -= mu * c.u[x];
                if c.u[x] > cutoff {
                    residual = residual.max(g.abs());
                }
            }
            grads.push(hu);
            mus.push(mu);
        }
        if iterations % opts.checkpoint_every == 0 {
            history.push((iterations, residual));
        }
        if residual < opts.tolerance && last_rate < opts.energy_rate_tolerance {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }

        let mut use_momentum = opts.momentum > 0.0 && !comps[0].momentum.is_empty();
        let mut tries = 0;
        let accepted = loop {
            let mut dirs = Vec::with_capacity(n_comp);
            for (c, g) in comps.iter().zip(&grads) {
                let mut d = precondition(grid, g, dt);
                d.iter_mut().for_each(|x| *x = -*x);
                if use_momentum {
                    for (x, m) in d.iter_mut().zip(&c.momentum) {
                        *x += opts.momentum * m;
                    }
                }
                let along = dot(grid, &d, &c.u);
                for (x, u) in d.iter_mut().zip(&c.u) {
                    *x -= along * u;
                }
                dirs.push(d);
            }
            let trial: Vec<Step> = comps.iter().zip(&dirs).map(|(c, d)| Step::new(grid, &c.u, d, dt)).collect();
            let de = energy_change(grid, &comps, &trial, &mus, beta);
            if de.is_finite() && de <= 0.0 {
                break Some((trial, de));
            }
            tries += 1;
            if use_momentum {
                use_momentum = false;
            } else {
                dt *= 0.5;
            }
            if tries > MAX_BACKTRACKS || dt < MIN_DT {
                break None;
            }
        };
        let Some((trial, de)) = accepted else {
            stalled = true;
            log::debug!("flow stalled at iteration {iterations}, residual {residual:.3e}");
            break;
        };

        let energy_scale = comps_energy(grid, &comps, beta).abs().max(1.0);
        last_rate = de.abs() / (dt * energy_scale);
        for (c, st) in comps.iter_mut().zip(trial) {
            c.momentum = st.delta.iter().map(|d| d / dt).collect();
            c.u = st.next;
            c.refresh_laplacian(grid);
        }
        iterations += 1;

        for c in &comps {
            let q = area * c.u.iter().map(|v| v.powi(4)).sum::<f64>();
            if q > collapse_bound && de < 0.0 {
                return Err(GpeError::CollapseDetected { iteration: iterations, quartic: q, bound: collapse_bound });
            }
        }
        dt = (dt * 1.1).min(dt_max);
    }

    // Steps are taken without folding signs; the tails can pick up rounding-level
    // negative values, which |u| removes without changing the mass.
    for c in comps.iter_mut() {
        if c.u.iter().any(|v| *v < 0.0) {
            c.u.iter_mut().for_each(|v| *v = v.abs());
            c.refresh_laplacian(grid);
        }
    }
    if history.last().map(|h| h.0) != Some(iterations) {
        history.push((iterations, residual));
    }
    if stalled {
        converged = residual < opts.tolerance;
    }
    Ok(finish(grid, comps, traps, beta, residual, history, iterations, converged, stalled, dt))
}

/// Total energy from the component state (used only to scale the rate).
fn comps_energy(grid: &Grid2D, comps: &[Component], beta: f64) -> f64 {
    let area = grid.cell_area();
    let mut e = 0.0;
    for c in comps {
        let kin = -dot(grid, &c.lap, &c.u);
        let pot = area * c.v.iter().zip(&c.u).map(|(v, u)| v * u * u).sum::<f64>();
        let q = area * c.u.iter().map(|u| u.powi(4)).sum::<f64>();
        e += kin + pot - 0.5 * c.a * q;
    }
    if comps.len() == 2 {
        e += beta * area * comps[0].u.iter().zip(&comps[1].u).map(|(a, b)| a * a * b * b).sum::<f64>();
    }
    e
}

/// `E(trial) - E(current)` written in terms of `δ = trial - current` and
/// `s = trial + current`. The mass change `∫δ s` vanishes exactly on the
/// constraint set; subtracting `μ_i ∫δ_i s_i` removes the part of the
/// normalization round-off that would otherwise be amplified by `μ_i`.
fn energy_change(grid: &Grid2D, comps: &[Component], trial: &[Step], mus: &[f64], beta: f64) -> f64 {
    let area = grid.cell_area();
    let mut de = 0.0;
    for ((c, st), mu) in comps.iter().zip(trial).zip(mus) {
        let (n, delta) = (&st.next, &st.delta);
        let spec: Vec<Complex64> = grid.forward(delta);
        // ∫|∇n|^2 - ∫|∇u|^2 = ∫|∇δ|^2 + 2⟨δ, -Δu⟩
        let kin = kinetic_from_spectrum(grid, &spec) - 2.0 * dot(grid, &delta, &c.lap);
        let mut pot = 0.0;
        let mut quart = 0.0;
        let mut mass = 0.0;
        for x in 0..delta.len() {
            let (d, u, nn) = (delta[x], c.u[x], n[x]);
            let ds = d * (nn + u);
            pot += c.v[x] * ds;
            quart += ds * (nn * nn + u * u);
            mass += ds;
        }
        de += kin + area * (pot - 0.5 * c.a * quart - mu * mass);
    }
    if comps.len() == 2 {
        // n1²n2² - u1²u2² = (n1² - u1²) n2² + u1² (n2² - u2²)
        let (u1, u2) = (&comps[0].u, &comps[1].u);
        let (n1, n2) = (&trial[0].next, &trial[1].next);
        let mut inter = 0.0;
        for x in 0..u1.len() {
            let d1 = trial[0].delta[x] * (n1[x] + u1[x]);
            let d2 = trial[1].delta[x] * (n2[x] + u2[x]);
            inter += d1 * n2[x] * n2[x] + u1[x] * u1[x] * d2;
        }
        de += beta * area * inter;
    }
    de
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &Arc<Grid2D>,
    comps: Vec<Component>,
    traps: &[TrapSpec],
    beta: f64,
    residual: f64,
    residual_history: Vec<(usize, f64)>,
    iterations: usize,
    converged: bool,
    stalled: bool,
    final_dt: f64,
) -> SolveResult {
    let couplings: Vec<f64> = comps.iter().map(|c| c.a).collect();
    let n_comp = comps.len();
    // Rayleigh quotients with the physical-space Laplacian, before the
    // state is moved into fields.
    let area = grid.cell_area();
    let mut rayleigh = Vec::with_capacity(n_comp);
    for i in 0..n_comp {
        let c = &comps[i];
        let mut acc = 0.0;
        for x in 0..c.u.len() {
            let u = c.u[x];
            let cross = if n_comp == 2 { beta * comps[1 - i].u[x].powi(2) * u } else { 0.0 };
            acc += (-c.lap[x] + c.v[x] * u - c.a * u * u * u + cross) * u;
        }
        rayleigh.push(area * acc);
    }
    let fields: Vec<ScalarField> = comps.into_iter().map(|c| ScalarField::from_raw(grid.clone(), c.u)).collect();
    let refs: Vec<&ScalarField> = fields.iter().collect();
    let parts = energy_parts(&refs, &couplings, traps, if n_comp == 2 { beta } else { 0.0 });
    let multipliers: Vec<f64> = (0..n_comp).map(|i| parts.multiplier(i)).collect();
    let multiplier_discrepancy = multipliers
        .iter()
        .zip(&rayleigh)
        .map(|(m, r)| (m - r).abs() / m.abs().max(1.0))
        .fold(0.0, f64::max);
    SolveResult {
        energy: parts.total(),
        component_energies: (0..n_comp).map(|i| parts.component_energy(i)).collect(),
        fields,
        parts,
        multipliers,
        rayleigh_quotients: rayleigh,
        multiplier_discrepancy,
        residual,
        residual_history,
        iterations,
        converged,
        stalled,
        final_dt,
        seed_index: 0,
    }
}
