//! Pass/fail evaluation of a finished sweep, shared by `sweep` and `report`.

use blowup_core::asymptotics::{
    classify_l, fit_power_law, l4_sandwich_constant, theorem2_diagnostics, theorem3_diagnostics, LClassification,
    PowerLawFit, SweepRecord, Theorem2Report, Theorem3Report,
};
use blowup_core::gpe::ProblemSpec;
use blowup_core::io::RunConfig;
use blowup_core::townes::RadialProfile;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct SweepDiagnostics {
    pub same_trap: bool,
    pub energy_fit: Option<PowerLawFit>,
    pub l_regime: Option<LClassification>,
    pub theorem2: Option<Theorem2Report>,
    pub theorem3: Option<Theorem3Report>,
    pub sandwich_k: f64,
    pub checks: Vec<Check>,
}

impl SweepDiagnostics {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!("{:<4} {:<40} {:.6e}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value));
        }
        s
    }
}

fn check(checks: &mut Vec<Check>, name: &str, value: f64, passed: bool) {
    checks.push(Check { name: name.into(), value, passed });
}

pub fn analyze(records: &[SweepRecord], template: &ProblemSpec, cfg: &RunConfig, profile: &RadialProfile) -> SweepDiagnostics {
    let an = &cfg.analysis;
    let same_trap = template.same_trap();
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let mut checks = Vec::new();
    check(&mut checks, "all points converged", ok.len() as f64, ok.len() == records.len());
    let sandwich_k = l4_sandwich_constant(records);
    check(&mut checks, "L4 sandwich constant K", sandwich_k, sandwich_k >= an.sandwich_k);

    let mut energy_fit = None;
    let mut l_regime = None;
    let mut theorem2 = None;
    let mut theorem3 = None;
    let tolerance = cfg.solver.tolerance;
    if same_trap {
        let t3 = theorem3_diagnostics(records, template.trap1.center, an.drift_bound);
        check(&mut checks, "separation / eps~ increasing", t3.rows.len() as f64, t3.separation_increasing);
        check(&mut checks, "drift constant", t3.drift_constant, t3.drift_ok);
        theorem3 = Some(t3);
    } else {
        let gaps: Vec<f64> = ok.iter().map(|r| r.a_star - r.a1).collect();
        let es: Vec<f64> = ok.iter().map(|r| r.e).collect();
        let window = (gaps.len().saturating_sub(an.fit_window), gaps.len());
        if let Ok(fit) = fit_power_law(&gaps, &es, Some(window)) {
            let p = template.trap1.exponent;
            let expected = p / (p + 2.0);
            check(&mut checks, "energy exponent", fit.exponent, (fit.exponent - expected).abs() <= 0.05);
            check(&mut checks, "energy fit r^2", fit.r_squared, fit.accepted);
            energy_fit = Some(fit);
        } else {
            check(&mut checks, "energy exponent", f64::NAN, false);
        }
        let delta = ok
            .last()
            .map(|r| r.decay_rate1.min(r.decay_rate2))
            .filter(|d| d.is_finite())
            .unwrap_or_else(|| profile.lambda_of(template.trap1.exponent).min(profile.lambda_of(template.trap2.exponent)));
        let c = template.trap1.center;
        let d = template.trap2.center;
        let delta0 = delta * ((c[0] - d[0]).powi(2) + (c[1] - d[1]).powi(2)).sqrt();
        let regime = classify_l(records, delta0, &an.l_thresholds).ok();
        let t2 = theorem2_diagnostics(records, template, tolerance, regime.as_ref().map(|c| c.regime));
        l_regime = regime;
        let last = t2.rows.last().map_or(f64::NAN, |r| r.ratio1);
        check(&mut checks, "peak ratio 1 decreasing (last 3)", last, t2.ratio1_decreasing);
        check(&mut checks, "peak ratio 1 below bound", last, last < an.peak_ratio_bound);
        if t2.ratio2_checked {
            let last2 = t2.rows.last().map_or(f64::NAN, |r| r.ratio2);
            check(&mut checks, "peak ratio 2 (L = 0 regime)", last2, t2.ratio2_ok);
        }
        let worst = t2.rows.iter().map(|r| r.sandwich_slack).fold(f64::INFINITY, f64::min);
        check(&mut checks, "energy lower bound slack", worst, worst >= -10.0 * tolerance);
        if let Some(r) = ok.last() {
            for (i, (dist, lam, p)) in
                [(r.profile_dist1, r.lambda_fit1, r.p1), (r.profile_dist2, r.lambda_fit2, r.p2)].into_iter().enumerate()
            {
                check(&mut checks, &format!("profile distance {} (final)", i + 1), dist, dist < an.distance_bound);
                let rel = (lam / profile.lambda_of(p) - 1.0).abs();
                check(&mut checks, &format!("lambda fit {} relative error", i + 1), rel, rel <= 0.1);
            }
        }
        let single_peaks = ok.iter().all(|r| r.peak_count1 == 1 && r.peak_count2 == 1);
        check(&mut checks, "single peak per component", ok.len() as f64, single_peaks);
        theorem2 = Some(t2);
    }
    SweepDiagnostics { same_trap, energy_fit, l_regime, theorem2, theorem3, sandwich_k, checks }
}
