//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use blowup_core::asymptotics::{
    fit_power_law, l4_sandwich_constant, run_single_sweep, run_sweep, theorem2_diagnostics, theorem3_diagnostics,
    SweepRecord,
};
use blowup_core::gpe::{minimize_pair, minimize_single, ProblemSpec, SolverOptions, TrapSpec};
use blowup_core::grid::Grid2D;
use blowup_core::io::{sweep_table, Manifest, ProblemConfig, RunConfig, ScheduleSpec};
use blowup_core::townes::{solve_townes_with, RadialProfile, TownesOptions};
use blowup_core::trial::{
    demonstrate_unbounded, lemma_a_minimize, log_bound_scale, same_trap_upper_bound, LemmaAParams, UnboundedSetup,
    UpperBoundOptions,
};

struct Verdict {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn criterion_1() -> (bool, String, RadialProfile) {
    let opts = TownesOptions::default();
    let coarse = solve_townes_with(&opts).expect("shooting at h");
    let fine = solve_townes_with(&TownesOptions { mesh_step: opts.mesh_step / 2.0, ..opts }).expect("shooting at h/2");
    let mesh = (fine.a_star() / coarse.a_star() - 1.0).abs();
    let (kin, quart) = coarse.identity_residuals();
    let g = Grid2D::new(12.0, 256).unwrap();
    let j = coarse.sample_to_grid(&g, 1.0, [0.0, 0.0]).unwrap().gn_quotient().unwrap();
    let gn = (j / (coarse.a_star() / 2.0) - 1.0).abs();
    let ok = mesh < 1e-4 && kin < 1e-6 && quart < 1e-6 && gn < 1e-6;
    let detail = format!(
        "a* = {:.12}, h vs h/2 {mesh:.2e}, identities {kin:.2e} / {quart:.2e}, GN {gn:.2e}",
        coarse.a_star()
    );
    (ok, detail, coarse)
}

fn criterion_2() -> (bool, String) {
    let g = Grid2D::new(8.0, 256).unwrap();
    let r = minimize_single(0.0, &TrapSpec::harmonic([0.0, 0.0]), &g, &SolverOptions::default()).unwrap();
    let mu = r.multipliers[0];
    let ok = r.converged && (r.energy - 2.0).abs() < 1e-6 && (mu - 2.0).abs() < 1e-6;
    (ok, format!("e = {:.10}, mu = {:.10}", r.energy, mu))
}

fn separated_config() -> RunConfig {
    RunConfig {
        problem: ProblemConfig {
            a1: 0.99,
            a2: 0.99,
            beta: 1.0,
            trap1: TrapSpec::harmonic([-1.0, 0.0]),
            trap2: TrapSpec::harmonic([1.0, 0.0]),
        },
        schedule: ScheduleSpec::List { fractions: [0.90, 0.95, 0.98, 0.99, 0.995].iter().map(|&f| [f, f]).collect() },
        ..RunConfig::default()
    }
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let mut push = |id, name, passed, detail: String, elapsed: Duration| {
        let v = Verdict { id, name, passed, detail, elapsed };
        println!(
            "criterion {:>2} {} {:<28} {} ({:.1} s)",
            v.id,
            if v.passed { "PASS" } else { "FAIL" },
            v.name,
            v.detail,
            v.elapsed.as_secs_f64()
        );
        verdicts.push(v);
    };

    let t = Instant::now();
    let (ok, detail, profile) = criterion_1();
    let el = t.elapsed();
    push(1, "Townes constants", ok && el < Duration::from_secs(10), detail, el);
    let a_star = profile.a_star();
    let lambda2 = profile.lambda_of(2.0);

    let t = Instant::now();
    let (ok, detail) = criterion_2();
    let el = t.elapsed();
    push(2, "harmonic oracle", ok && el < Duration::from_secs(30), detail, el);

    // Criteria 3 and 4 share one single-component sweep.
    let t = Instant::now();
    let fractions = [0.90, 0.95, 0.98, 0.99, 0.995];
    let couplings: Vec<f64> = fractions.iter().map(|f| f * a_star).collect();
    let g = Grid2D::new(8.0, 256).unwrap();
    let pts = run_single_sweep(&couplings, &TrapSpec::harmonic([0.0, 0.0]), &g, &SolverOptions::default(), &profile, 0);
    let pts: Vec<_> = pts.into_iter().map(|p| p.expect("single sweep point")).collect();
    let el3 = t.elapsed();
    let gaps: Vec<f64> = couplings.iter().map(|a| a_star - a).collect();
    let energies: Vec<f64> = pts.iter().map(|p| p.energy).collect();
    let fit = fit_power_law(&gaps, &energies, None).unwrap();
    let prefactor = fit.log_prefactor.exp();
    let target = profile.energy_constant(2.0);
    let ok3 = pts.iter().all(|p| p.converged)
        && (fit.exponent - 0.5).abs() <= 0.05
        && fit.r_squared >= 0.98
        && within(prefactor, target, 0.1)
        && el3 < Duration::from_secs(600);
    push(
        3,
        "energy scaling law",
        ok3,
        format!(
            "exponent {:.4}, r^2 {:.6}, prefactor {:.5} vs {:.5}; e/eps^2 at 0.995 = {:.5}",
            fit.exponent,
            fit.r_squared,
            prefactor,
            target,
            pts[4].energy / pts[4].eps.powi(2)
        ),
        el3,
    );
    let last = &pts[4];
    let e2mu = last.eps * last.eps * last.mu;
    push(
        4,
        "multiplier limit",
        within(e2mu, -lambda2 * lambda2, 0.1),
        format!("eps^2 mu = {e2mu:.5} vs -lambda^2 = {:.5}", -lambda2 * lambda2),
        Duration::ZERO,
    );

    // Criteria 5, 6 and 11 share the separated-trap sweep.
    let t = Instant::now();
    let cfg = separated_config();
    cfg.validate().unwrap();
    let sweep = cfg.sweep_config(a_star);
    let records = run_sweep(&sweep, &profile).unwrap();
    let el5 = t.elapsed();
    let tol = cfg.solver.tolerance;
    let t2 = theorem2_diagnostics(&records, &sweep.template, tol, None);
    let fin = records.last().unwrap();
    let dist_ok = fin.profile_dist1 < 0.05 && fin.profile_dist2 < 0.05;
    let lam_ok = within(fin.lambda_fit1, lambda2, 0.1) && within(fin.lambda_fit2, lambda2, 0.1);
    let peaks_ok = records.iter().all(|r| r.peak_count1 == 1 && r.peak_count2 == 1);
    let conv_ok = records.iter().all(SweepRecord::is_ok);
    let worst_slack = t2.rows.iter().map(|r| r.sandwich_slack).fold(f64::INFINITY, f64::min);
    let ok5 = conv_ok
        && t2.sandwich_ok
        && t2.ratio1_decreasing
        && t2.ratio1_final_below_half
        && dist_ok
        && lam_ok
        && peaks_ok
        && el5 < Duration::from_secs(1800);
    push(
        5,
        "separated traps",
        ok5,
        format!(
            "min slack {worst_slack:.2e}, final peak ratio {:.2e}, H1 distance {:.4}, lambda_fit {:.4} vs {:.4}, peaks {}",
            t2.rows.last().map_or(f64::NAN, |r| r.ratio1),
            fin.profile_dist1.max(fin.profile_dist2),
            fin.lambda_fit1,
            lambda2,
            if peaks_ok { "single" } else { "multiple" }
        ),
        el5,
    );
    let k = l4_sandwich_constant(&records);
    push(6, "quartic sandwich", k >= 0.1, format!("K = {k:.4}"), Duration::ZERO);

    let t = Instant::now();
    let same = RunConfig {
        problem: ProblemConfig {
            a1: 0.99,
            a2: 0.99,
            beta: 1.0,
            trap1: TrapSpec::harmonic([0.0, 0.0]),
            trap2: TrapSpec::harmonic([0.0, 0.0]),
        },
        schedule: ScheduleSpec::List { fractions: [0.90, 0.95, 0.98, 0.99].iter().map(|&f| [f, f]).collect() },
        ..RunConfig::default()
    };
    let recs7 = run_sweep(&same.sweep_config(a_star), &profile).unwrap();
    let el7 = t.elapsed();
    let t3 = theorem3_diagnostics(&recs7, [0.0, 0.0], 10.0);
    let seps: Vec<String> = t3.rows.iter().map(|r| format!("{:.3}", r.sep1)).collect();
    push(
        7,
        "shared trap repulsion",
        t3.passed && recs7.iter().all(SweepRecord::is_ok) && el7 < Duration::from_secs(1800),
        format!("sep/eps~ [{}], drift constant {:.3}", seps.join(", "), t3.drift_constant),
        el7,
    );

    let t = Instant::now();
    let g8 = Grid2D::new(3.0, 1024).unwrap();
    let rep = demonstrate_unbounded(1.1 * a_star, &UnboundedSetup::default(), &g8, &profile).unwrap();
    let energies: Vec<String> = rep.points.iter().map(|p| format!("{:.3}", p.total_energy)).collect();
    let final_e = rep.points.last().map_or(f64::NAN, |p| p.total_energy);
    let threshold = -0.05 * 40.0 * 40.0 * 0.1 * 0.5;
    push(
        8,
        "unbounded above a*",
        rep.points.len() == 3 && rep.truncated_at.is_none() && rep.strictly_decreasing && final_e < threshold,
        format!("E(tau = 10, 20, 40) = [{}], threshold {threshold}", energies.join(", ")),
        t.elapsed(),
    );

    let t = Instant::now();
    let g9 = Grid2D::new(18.0, 512).unwrap();
    let g9m = Grid2D::new(8.0, 256).unwrap();
    let mut ratios = Vec::new();
    let mut above_min = true;
    let mut rows = Vec::new();
    for f in [0.97, 0.98, 0.99, 0.995] {
        let a = f * a_star;
        let ub = same_trap_upper_bound(a, a, 2.0, 1.0, [0.0, 0.0], &g9, &profile, &UpperBoundOptions::default()).unwrap();
        let trap = TrapSpec::harmonic([0.0, 0.0]);
        let spec = ProblemSpec { a1: a, a2: a, beta: 1.0, trap1: trap, trap2: trap };
        let m = minimize_pair(&spec, &g9m, &SolverOptions::default()).unwrap();
        above_min &= m.converged && ub.energy.total_energy >= m.energy - 10.0 * tol;
        debug_assert!((ub.bound_ratio - ub.energy.total_energy / log_bound_scale(a_star - a, 2.0)).abs() < 1e-12);
        ratios.push(ub.bound_ratio);
        rows.push(format!(
            "{f}: E {:.4} / e {:.4}{}",
            ub.energy.total_energy,
            m.energy,
            if m.converged { String::new() } else { format!(" (unconverged, residual {:.1e})", m.residual) }
        ));
    }
    let c = ratios.iter().cloned().fold(0.0, f64::max);
    let spread = c / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    push(
        9,
        "same-trap upper bound",
        above_min && spread <= 2.0 && ratios.iter().all(|r| r.is_finite() && *r > 0.0),
        format!("C = {c:.4}, ratio spread {spread:.3}; {}", rows.join(", ")),
        t.elapsed(),
    );

    let t = Instant::now();
    let (ok10, detail10) = criterion_10(a_star);
    let el10 = t.elapsed();
    push(10, "scalar minimization", ok10 && el10 < Duration::from_secs(5), detail10, el10);

    let t = Instant::now();
    let manifest = Manifest::new("sweep", &cfg);
    let replay = RunConfig::from_json(&manifest.to_json()).unwrap();
    let mut replay_sweep = replay.sweep_config(a_star);
    replay_sweep.jobs = 1;
    let again = run_sweep(&replay_sweep, &profile).unwrap();
    let first = sweep_table(&records).to_bytes().unwrap();
    let second = sweep_table(&again).to_bytes().unwrap();
    push(
        11,
        "determinism",
        first == second,
        format!("sweep.csv {} bytes, identical: {}", first.len(), first == second),
        t.elapsed(),
    );

    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// Brute-force oracle: dense logarithmic scan of f followed by golden-section
// refinement around the best sample.
fn brute_force_min(p: &LemmaAParams) -> f64 {
    let lo = 3.0_f64.exp().ln();
    let hi = 40.0_f64;
    let n = 200_000;
    let s_at = |k: usize| (lo + (hi - lo) * k as f64 / n as f64).exp();
    let best = (1..n).min_by(|&i, &j| p.f(s_at(i)).total_cmp(&p.f(s_at(j)))).unwrap();
    let (mut a, mut b) = (s_at(best - 1).ln(), s_at((best + 1).min(n)).ln());
    let g = 0.5 * (5.0_f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if p.f(c.exp()) < p.f(d.exp()) {
            b = d;
        } else {
            a = c;
        }
    }
    (0.5 * (a + b)).exp()
}

fn criterion_10(a_star: f64) -> (bool, String) {
    let mut worst: f64 = 0.0;
    let mut brackets = true;
    let mut monotone = true;
    for kappa in [1e5, 1e6, 1e7] {
        for p in [1.0, 2.0, 3.0] {
            for af in [0.99, 0.999] {
                let mut last = f64::NEG_INFINITY;
                for m in [1.0, 10.0, 100.0] {
                    let params = LemmaAParams { kappa, m, p, a: af * a_star, a_star };
                    let r = match lemma_a_minimize(&params) {
                        Ok(r) => r,
                        Err(e) => return (false, format!("kappa {kappa} m {m} p {p} a {af}: {e}")),
                    };
                    let s = brute_force_min(&params);
                    worst = worst.max((r.s1 / s - 1.0).abs());
                    brackets &= r.bracket_holds;
                    monotone &= r.bound_ratio > last;
                    last = r.bound_ratio;
                }
            }
        }
    }
    let ok = worst <= 1e-6 && brackets && monotone;
    (ok, format!("54 cases, worst relative s1 error {worst:.2e}, bracket {brackets}, ratio increasing in m {monotone}"))
}
