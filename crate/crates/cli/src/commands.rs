use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use blowup_core::asymptotics::{self, find_peak, run_sweep, SweepRecord};
use blowup_core::gpe::{self, euler_lagrange_residual, euler_lagrange_residual_single, ProblemSpec, SolveResult, TrapSpec};
use blowup_core::grid::Grid2D;
use blowup_core::io::{
    apply_override, field_dump_bytes, fmt_f64, parse_sweep_table, read_text, sha256_hex, sweep_table, write_bytes, CsvTable,
    LinePlot, Manifest, RunConfig, Series,
};
use blowup_core::townes::{solve_townes_with, RadialProfile};
use blowup_core::trial::{demonstrate_unbounded, lemma_a_minimize, same_trap_upper_bound, LemmaAParams};

use crate::analysis;

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Invariant(String),
    Diagnostic(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Solver(_) => 2,
            Self::Invariant(_) => 3,
            Self::Diagnostic(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "configuration: {e:#}"),
            Self::Solver(e) => write!(f, "solver: {e:#}"),
            Self::Invariant(m) => write!(f, "invariant check failed: {m}"),
            Self::Diagnostic(m) => write!(f, "diagnostics failed: {m}"),
        }
    }
}

trait OrFail<T> {
    fn config(self) -> Result<T, Failure>;
    fn solver(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn solver(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Solver(e.into()))
    }
}

pub struct Flags {
    pub check: bool,
}

pub fn load_config(
    path: Option<&Path>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    overrides: &[String],
) -> Result<RunConfig, Failure> {
    let mut doc = match path {
        Some(p) => {
            let text = read_text(p).config()?;
            let cfg = RunConfig::from_json(&text).with_context(|| format!("reading {}", p.display())).config()?;
            serde_json::to_value(cfg).config()?
        }
        None => serde_json::to_value(RunConfig::default()).config()?,
    };
    if let Some(out) = out {
        doc["paths"]["out"] = serde_json::Value::String(out.to_string_lossy().into_owned());
    }
    if let Some(j) = jobs {
        doc["jobs"] = j.into();
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::Config(anyhow!("override {o:?} is not KEY=VALUE")))?;
        apply_override(&mut doc, k.trim(), v.trim()).config()?;
    }
    let cfg = RunConfig::from_value(doc).config()?;
    cfg.validate().config()?;
    Ok(cfg)
}

/// Collects outputs in memory; everything is written at the end.
struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
    manifest_name: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        let manifest_name = if command == "sweep" { "manifest.json".into() } else { format!("{command}.manifest.json") };
        Self { dir: cfg.paths.out.clone(), manifest: Manifest::new(command, cfg), manifest_name, files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.manifest.record_output(name, &bytes);
        self.files.push((name.into(), bytes));
    }

    fn csv(&mut self, name: &str, table: &CsvTable) -> Result<(), Failure> {
        let bytes = table.to_bytes().solver()?;
        self.add(name, bytes);
        Ok(())
    }

    fn svg(&mut self, name: &str, plot: &LinePlot) {
        self.add(name, plot.render().into_bytes());
    }

    fn write(mut self) -> Result<(), Failure> {
        for (name, bytes) in std::mem::take(&mut self.files) {
            write_bytes(&self.dir.join(&name), &bytes).solver()?;
        }
        write_bytes(&self.dir.join(&self.manifest_name), self.manifest.to_json().as_bytes()).solver()?;
        Ok(())
    }
}

fn read_profile(cfg: &RunConfig) -> Result<(RadialProfile, String), Failure> {
    let path = cfg.paths.q_reference();
    let text = read_text(&path)
        .with_context(|| format!("run `blowup townes` first to create {}", path.display()))
        .config()?;
    Ok((RadialProfile::from_json(&text).config()?, sha256_hex(text.as_bytes())))
}

fn load_profile(cfg: &RunConfig, out: &mut Outputs) -> Result<RadialProfile, Failure> {
    let (profile, hash) = read_profile(cfg)?;
    out.manifest.q_reference_sha256 = Some(hash);
    Ok(profile)
}

fn history_plot(title: &str, r: &SolveResult) -> LinePlot {
    let pts = r.residual_history.iter().map(|&(i, v)| (i as f64, v)).collect();
    let mut p = LinePlot::new(title, "iteration", "residual").with(Series::new("residual", pts));
    p.log_y = true;
    p
}

pub fn townes(cfg: &RunConfig, flags: &Flags) -> Result<(), Failure> {
    let profile = solve_townes_with(&cfg.townes).solver()?;
    let (kin, quart) = profile.identity_residuals();
    let g = cfg.constants.gn_grid.build().solver()?;
    let sampled = profile.sample_to_grid(&g, 1.0, [0.0, 0.0]).solver()?;
    let j = sampled.gn_quotient().solver()?;
    let gn = (j / (profile.a_star() / 2.0) - 1.0).abs();

    let mut out = Outputs::new("townes", cfg);
    out.add("townes.json", profile.to_json().solver()?.into_bytes());
    let mut table = CsvTable::new("blowup-constants/1", &["p", "m_p", "lambda", "energy_constant"]);
    for &p in &cfg.constants.p_list {
        table.push_floats(&[p, profile.moment(p), profile.lambda_of(p), profile.energy_constant(p)]);
    }
    out.csv("constants.csv", &table)?;
    let pts: Vec<(f64, f64)> = (0..=400).map(|k| k as f64 * 0.025).map(|r| (r, profile.value_at(r))).collect();
    out.svg("townes_profile.svg", &LinePlot::new("radial ground state", "r", "Q(r)").with(Series::new("Q", pts)));

    println!("a*            {:.15}", profile.a_star());
    println!("Q(0)          {:.15}", profile.central_value);
    println!("tail          {:.4} r^-1/2 e^-r (fitted slope {:.5})", profile.tail_coeff, profile.tail_slope);
    for row in &table.rows {
        println!("p = {:<24} m_p = {}  lambda = {}  e/eps^p -> {}", row[0], row[1], row[2], row[3]);
    }
    let mut failures = Vec::new();
    if flags.check {
        let mut half = cfg.townes;
        half.mesh_step /= 2.0;
        let fine = solve_townes_with(&half).solver()?;
        let rel = (fine.a_star() / profile.a_star() - 1.0).abs();
        println!("|kinetic/mass - 1|       {kin:.3e}");
        println!("|quartic/(2 mass) - 1|   {quart:.3e}");
        println!("|J(Q)/(a*/2) - 1|        {gn:.3e}");
        println!("a* at h vs h/2           {rel:.3e}");
        if rel > 1e-4 {
            failures.push(format!("mesh refinement changes a* by {rel:.3e}"));
        }
    }
    if kin > 1e-6 || quart > 1e-6 {
        failures.push(format!("identity residuals {kin:.3e}, {quart:.3e}"));
    }
    if gn > 1e-6 {
        failures.push(format!("GN quotient off by {gn:.3e}"));
    }
    out.write()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(failures.join("; ")))
    }
}

/// Base grid, doubled until the cores at the given couplings are resolved.
fn adequate_grid(cfg: &RunConfig, spec: &ProblemSpec, profile: &RadialProfile) -> Result<std::sync::Arc<Grid2D>, Failure> {
    let (g, flagged) = cfg.grid.resolve(spec, profile);
    if flagged {
        log::warn!("grid {}x{} under-resolves the core", g.points_per_side, g.points_per_side);
    }
    g.build().solver()
}

pub fn single(cfg: &RunConfig, flags: &Flags) -> Result<(), Failure> {
    let mut out = Outputs::new("single", cfg);
    let profile = load_profile(cfg, &mut out)?;
    let a_star = profile.a_star();
    let spec = cfg.problem.resolve(a_star);
    let probe = ProblemSpec { a2: 0.0, trap2: spec.trap1, ..spec };
    let grid = adequate_grid(cfg, &probe, &profile)?;
    let r = gpe::minimize_single(spec.a1, &spec.trap1, &grid, &cfg.solver).solver()?;
    let p = spec.trap1.exponent;
    let eps = asymptotics::blowup_scale(a_star, spec.a1, p);
    let mu = r.multipliers[0];
    let el = euler_lagrange_residual_single(r.field(0), spec.a1, &spec.trap1, mu);
    let peak = find_peak(r.field(0)).solver()?;
    let mut t = CsvTable::new(
        "blowup-single/1",
        &[
            "a", "a_over_astar", "p", "energy", "mu", "rayleigh", "quartic", "eps", "energy_over_eps_p", "eps2_mu",
            "peak_x", "peak_y", "residual", "el_residual", "iterations", "converged",
        ],
    );
    let mut row: Vec<String> = [
        spec.a1,
        cfg.problem.a1,
        p,
        r.energy,
        mu,
        r.rayleigh_quotients[0],
        r.parts.quartic[0],
        eps,
        r.energy / eps.powf(p),
        eps * eps * mu,
        peak.location[0],
        peak.location[1],
        r.residual,
        el,
    ]
    .iter()
    .map(|&x| fmt_f64(x))
    .collect();
    row.push(r.iterations.to_string());
    row.push(r.converged.to_string());
    t.push(row);
    out.csv("single.csv", &t)?;
    out.add("single_field.bin", field_dump_bytes(&[("u", r.field(0))]).solver()?);
    out.svg("single_residual.svg", &history_plot("single-component flow", &r));
    println!("e = {:.12}  mu = {:.12}  residual = {:.3e}  iterations = {}", r.energy, mu, r.residual, r.iterations);
    out.write()?;
    if !r.converged {
        return Err(Failure::Solver(anyhow!("flow did not converge (residual {:.3e})", r.residual)));
    }
    if flags.check {
        println!("Euler-Lagrange residual  {el:.3e}");
        println!("multiplier discrepancy   {:.3e}", r.multiplier_discrepancy);
        if el > 10.0 * cfg.solver.tolerance {
            return Err(Failure::Invariant(format!("Euler-Lagrange residual {el:.3e}")));
        }
    }
    Ok(())
}

pub fn pair(cfg: &RunConfig, flags: &Flags) -> Result<(), Failure> {
    let mut out = Outputs::new("pair", cfg);
    let profile = load_profile(cfg, &mut out)?;
    let spec = cfg.problem.resolve(profile.a_star());
    let grid = adequate_grid(cfg, &spec, &profile)?;
    let r = gpe::minimize_pair(&spec, &grid, &cfg.solver).solver()?;
    let mus = (r.multipliers[0], r.multipliers[1]);
    let fields = r.pair().ok_or_else(|| Failure::Solver(anyhow!("pair solve returned one field")))?;
    let el = euler_lagrange_residual(&fields, &spec, mus).solver()?;
    let mut t = CsvTable::new(
        "blowup-pair/1",
        &[
            "a1", "a2", "beta", "energy", "component_energy1", "component_energy2", "interaction", "mu1", "mu2",
            "residual", "el_residual", "iterations", "converged",
        ],
    );
    let mut row: Vec<String> = [
        spec.a1,
        spec.a2,
        spec.beta,
        r.energy,
        r.component_energies[0],
        r.component_energies[1],
        r.interaction(),
        mus.0,
        mus.1,
        r.residual,
        el,
    ]
    .iter()
    .map(|&x| fmt_f64(x))
    .collect();
    row.push(r.iterations.to_string());
    row.push(r.converged.to_string());
    t.push(row);
    out.csv("pair.csv", &t)?;
    out.add("pair_fields.bin", field_dump_bytes(&[("u1", r.field(0)), ("u2", r.field(1))]).solver()?);
    out.svg("pair_residual.svg", &history_plot("coupled flow", &r));
    println!(
        "e = {:.12}  mu = ({:.8}, {:.8})  interaction = {:.6e}  residual = {:.3e}",
        r.energy,
        mus.0,
        mus.1,
        r.interaction(),
        r.residual
    );
    out.write()?;
    if !r.converged {
        return Err(Failure::Solver(anyhow!("flow did not converge (residual {:.3e})", r.residual)));
    }
    if flags.check {
        println!("Euler-Lagrange residual  {el:.3e}");
        println!("multiplier discrepancy   {:.3e}", r.multiplier_discrepancy);
        if el > 10.0 * cfg.solver.tolerance || r.multiplier_discrepancy > 1e-6 {
            return Err(Failure::Invariant(format!(
                "Euler-Lagrange residual {el:.3e}, multiplier discrepancy {:.3e}",
                r.multiplier_discrepancy
            )));
        }
    }
    Ok(())
}

fn sweep_plots(out: &mut Outputs, records: &[SweepRecord]) {
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| !r.is_failed()).collect();
    let gap = |r: &SweepRecord| r.a_star - r.a1;
    let energy = LinePlot::new("ground-state energy", "a* - a1", "e")
        .log_log()
        .with(Series::new("e", ok.iter().map(|r| (gap(r), r.e)).collect()))
        .with(Series::new("e1 + e2", ok.iter().map(|r| (gap(r), r.e1 + r.e2)).collect()));
    out.svg("energy.svg", &energy);
    let dist = LinePlot::new("rescaled profile distance", "a1 / a*", "H1 distance")
        .with(Series::new("component 1", ok.iter().map(|r| (r.a1 / r.a_star, r.profile_dist1)).collect()))
        .with(Series::new("component 2", ok.iter().map(|r| (r.a1 / r.a_star, r.profile_dist2)).collect()));
    out.svg("profile_distance.svg", &dist);
    let sep = |r: &SweepRecord| ((r.x_peak1[0] - r.x_peak2[0]).powi(2) + (r.x_peak1[1] - r.x_peak2[1]).powi(2)).sqrt();
    let sepplot = LinePlot::new("peak separation", "a1 / a*", "separation / eps~1")
        .with(Series::new("|x1 - x2| / eps~1", ok.iter().map(|r| (r.a1 / r.a_star, sep(r) / r.eps_tilde1)).collect()));
    out.svg("peak_separation.svg", &sepplot);
}

pub fn sweep(cfg: &RunConfig, _flags: &Flags) -> Result<(), Failure> {
    let mut out = Outputs::new("sweep", cfg);
    let profile = load_profile(cfg, &mut out)?;
    let a_star = profile.a_star();
    let config = cfg.sweep_config(a_star);
    let template = config.template;
    let records = run_sweep(&config, &profile).config()?;
    let diag = analysis::analyze(&records, &template, cfg, &profile);
    out.csv("sweep.csv", &sweep_table(&records))?;
    out.add("diagnostics.json", serde_json::to_vec_pretty(&diag).solver()?);
    sweep_plots(&mut out, &records);
    print!("{}", diag.summary());
    out.write()?;
    let failed: Vec<String> = records.iter().filter(|r| r.is_failed()).map(|r| format!("#{} {}", r.index, r.status)).collect();
    if !failed.is_empty() {
        return Err(Failure::Solver(anyhow!("{}", failed.join("; "))));
    }
    if !diag.passed() {
        let names: Vec<&str> = diag.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(Failure::Diagnostic(names.join(", ")));
    }
    Ok(())
}

pub fn unbounded(cfg: &RunConfig, _flags: &Flags) -> Result<(), Failure> {
    let mut out = Outputs::new("unbounded", cfg);
    let profile = load_profile(cfg, &mut out)?;
    let u = &cfg.unbounded;
    let grid = u.grid.build().solver()?;
    let rep = demonstrate_unbounded(u.a1 * profile.a_star(), &u.setup, &grid, &profile).solver()?;
    let mut t = CsvTable::new("blowup-unbounded/1", &["tau", "kinetic", "potential", "quartic", "overlap", "total_energy"]);
    for p in &rep.points {
        t.push_floats(&p.csv_row());
        println!("tau = {:<8} E = {:.10}", p.tau, p.total_energy);
    }
    out.csv("unbounded.csv", &t)?;
    let pts = rep.points.iter().map(|p| (p.tau, p.total_energy)).collect();
    out.svg("unbounded.svg", &LinePlot::new("trial energy above a*", "tau", "E").with(Series::new("E", pts)));
    out.write()?;
    if let Some(tau) = rep.truncated_at {
        eprintln!("ladder truncated at tau = {tau}: grid too coarse");
    }
    if rep.points.len() < 2 || !rep.strictly_decreasing {
        return Err(Failure::Invariant("trial energies are not strictly decreasing".into()));
    }
    Ok(())
}

pub fn trial(cfg: &RunConfig, _flags: &Flags, compare: bool) -> Result<(), Failure> {
    let mut out = Outputs::new("trial", cfg);
    let profile = load_profile(cfg, &mut out)?;
    let a_star = profile.a_star();
    let tr = &cfg.trial;
    let grid = tr.grid.build().solver()?;
    let mut header = vec!["a_over_astar", "tau", "r_cut", "energy", "bound_ratio", "analytic_bound"];
    if compare {
        header.extend(["measured_energy", "measured_residual"]);
    }
    let mut t = CsvTable::new("blowup-trial/1", &header);
    let mut violations = Vec::new();
    let mut pts = Vec::new();
    for &f in &tr.fractions {
        let a = f * a_star;
        let ub = same_trap_upper_bound(a, a, tr.p, tr.beta, tr.x0, &grid, &profile, &tr.options).solver()?;
        let mut row = vec![f, ub.tau, ub.r_cut, ub.energy.total_energy, ub.bound_ratio, ub.analytic_bound];
        if compare {
            let trap = TrapSpec::new(tr.x0, tr.p);
            let spec = ProblemSpec { a1: a, a2: a, beta: tr.beta, trap1: trap, trap2: trap };
            let g = adequate_grid(cfg, &spec, &profile)?;
            let r = gpe::minimize_pair(&spec, &g, &cfg.solver).solver()?;
            if ub.energy.total_energy < r.energy - 10.0 * cfg.solver.tolerance {
                violations.push(format!("a/a* = {f}: trial {} below minimum {}", ub.energy.total_energy, r.energy));
            }
            row.extend([r.energy, r.residual]);
        }
        println!("a/a* = {f:<6} tau = {:.4}  E = {:.8}  ratio = {:.6}", ub.tau, ub.energy.total_energy, ub.bound_ratio);
        pts.push((a_star - a, ub.bound_ratio));
        t.push_floats(&row);
    }
    out.csv("trial.csv", &t)?;
    out.svg(
        "trial.svg",
        &LinePlot::new("same-trap upper bound / log scale", "a* - a", "ratio").with(Series::new("E / scale", pts)),
    );
    out.write()?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(violations.join("; ")))
    }
}

pub fn lemma_a(cfg: &RunConfig, _flags: &Flags) -> Result<(), Failure> {
    let mut out = Outputs::new("lemma-a", cfg);
    let profile = load_profile(cfg, &mut out)?;
    let a_star = profile.a_star();
    let la = &cfg.lemma_a;
    let mut t = CsvTable::new(
        "blowup-lemma-a/1",
        &[
            "kappa", "m", "p", "a_over_astar", "s1", "f_min", "bracket_lo", "bracket_hi", "bracket_holds", "bound_ratio",
            "iterations",
        ],
    );
    let mut problems = Vec::new();
    let mut plot = LinePlot::new("bound ratio against m", "m", "ratio").log_log();
    for &kappa in &la.kappas {
        for &p in &la.ps {
            for &af in &la.a_fractions {
                let mut series = Vec::new();
                for &m in &la.ms {
                    let params = LemmaAParams { kappa, m, p, a: af * a_star, a_star };
                    let r = lemma_a_minimize(&params)
                        .with_context(|| format!("kappa = {kappa}, m = {m}, p = {p}, a/a* = {af}"))
                        .solver()?;
                    if !r.bracket_holds {
                        problems.push(format!("bracket fails at kappa = {kappa}, m = {m}, p = {p}, a/a* = {af}"));
                    }
                    series.push((m, r.bound_ratio));
                    let mut row: Vec<String> =
                        [kappa, m, p, af, r.s1, r.f_min, r.bracket.0, r.bracket.1].iter().map(|&x| fmt_f64(x)).collect();
                    row.push(r.bracket_holds.to_string());
                    row.push(fmt_f64(r.bound_ratio));
                    row.push(r.iterations.to_string());
                    t.push(row);
                }
                let mut sorted = series.clone();
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                if sorted.windows(2).any(|w| !(w[1].1 > w[0].1)) || sorted.iter().any(|s| !(s.1 > 0.0)) {
                    problems.push(format!("ratio not positive and increasing in m at kappa = {kappa}, p = {p}, a/a* = {af}"));
                }
                plot.series.push(Series::new(&format!("k={kappa:e} p={p} a={af}"), sorted));
            }
        }
    }
    out.csv("lemma_a.csv", &t)?;
    out.svg("lemma_a.svg", &plot);
    println!("{} parameter points, {} problems", t.rows.len(), problems.len());
    out.write()?;
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(problems.join("; ")))
    }
}

pub fn report(cfg: &RunConfig, _flags: &Flags) -> Result<(), Failure> {
    let dir = &cfg.paths.out;
    let manifest = Manifest::from_json(&read_text(&dir.join("manifest.json")).config()?).config()?;
    let table = CsvTable::read(&dir.join("sweep.csv")).config()?;
    let records = parse_sweep_table(&table).config()?;
    let mut mismatched = Vec::new();
    for r in records.iter().filter(|r| !r.is_failed()) {
        let (e1, e2, t1, t2) = r.rederive();
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        if !(same(e1, r.eps1) && same(e2, r.eps2) && same(t1, r.eps_tilde1) && same(t2, r.eps_tilde2)) {
            mismatched.push(r.index);
        }
    }
    let run_cfg = &manifest.config;
    let (profile, _) = read_profile(run_cfg)?;
    let template = run_cfg.problem.resolve(profile.a_star());
    let diag = analysis::analyze(&records, &template, run_cfg, &profile);
    let mut md = String::from("# Sweep report\n\n");
    md.push_str(&format!("Configuration hash `{}`, {} points.\n\n", manifest.config_sha256, records.len()));
    md.push_str("| a1/a* | e | e1 + e2 | eps^2 mu1 | peak count | profile distance |\n|---|---|---|---|---|---|\n");
    for r in &records {
        md.push_str(&format!(
            "| {:.4} | {:.8} | {:.8} | {:.5} | {}/{} | {:.4e} |\n",
            r.a1 / r.a_star,
            r.e,
            r.e1 + r.e2,
            r.eps1 * r.eps1 * r.mu1,
            r.peak_count1,
            r.peak_count2,
            r.profile_dist1
        ));
    }
    md.push_str("\n```\n");
    md.push_str(&diag.summary());
    md.push_str("```\n");
    write_bytes(&dir.join("report.md"), md.as_bytes()).solver()?;
    print!("{}", diag.summary());
    if !mismatched.is_empty() {
        return Err(Failure::Invariant(format!("derived columns differ from primaries at points {mismatched:?}")));
    }
    if !diag.passed() {
        return Err(Failure::Diagnostic("see report.md".into()));
    }
    Ok(())
}
