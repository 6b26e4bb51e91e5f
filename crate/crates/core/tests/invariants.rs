use std::sync::{Arc, OnceLock};

use blowup_core::asymptotics::{
    classify_l_values, find_peak, fit_power_law, quartic_scale, LThresholds, SweepRecord,
};
use blowup_core::gpe::{energy, energy_breakdown, FieldPair, ProblemSpec, TrapSpec};
use blowup_core::grid::{Grid2D, ScalarField};
use blowup_core::io::{field_dump_bytes, fmt_f64, parse_field_dump, parse_sweep_table, sweep_table, CsvTable};
use blowup_core::townes::{solve_townes, RadialProfile};
use blowup_core::trial::{cutoff, lemma_a_minimize, LemmaAParams};
use proptest::prelude::*;

fn profile() -> &'static RadialProfile {
    static P: OnceLock<RadialProfile> = OnceLock::new();
    P.get_or_init(|| solve_townes(1e-10, 20.0).unwrap())
}

fn grid() -> Arc<Grid2D> {
    static G: OnceLock<Arc<Grid2D>> = OnceLock::new();
    G.get_or_init(|| Grid2D::new(6.0, 64).unwrap()).clone()
}

fn gaussian(c: [f64; 2], w: f64) -> ScalarField {
    let mut u = ScalarField::from_fn(grid(), |x, y| (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (2.0 * w * w)).exp());
    u.normalize();
    u
}

fn spec(a1: f64, a2: f64, beta: f64) -> ProblemSpec {
    ProblemSpec { a1, a2, beta, trap1: TrapSpec::harmonic([-0.5, 0.0]), trap2: TrapSpec::new([0.7, 0.2], 3.0) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn energy_is_symmetric_under_swap(a1 in 0.0..11.0f64, a2 in 0.0..11.0f64, beta in 0.0..5.0f64,
                                      w1 in 0.4..1.5f64, w2 in 0.4..1.5f64) {
        let s = spec(a1, a2, beta);
        let pair = FieldPair::new(gaussian([-0.5, 0.0], w1), gaussian([0.7, 0.2], w2)).unwrap();
        let e = energy(&pair, &s).unwrap();
        let es = energy(&pair.swapped(), &s.swapped()).unwrap();
        prop_assert!((e - es).abs() <= 1e-12 * e.abs().max(1.0));
    }

    #[test]
    fn energy_increases_with_beta(beta in 0.0..5.0f64, extra in 0.01..3.0f64, w in 0.4..1.5f64) {
        let pair = FieldPair::new(gaussian([0.0, 0.0], w), gaussian([0.3, 0.0], w)).unwrap();
        let lo = energy(&pair, &spec(5.0, 5.0, beta)).unwrap();
        let hi = energy(&pair, &spec(5.0, 5.0, beta + extra)).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn parts_resum_to_total(a1 in 0.0..11.0f64, beta in 0.0..5.0f64, w in 0.4..1.5f64) {
        let pair = FieldPair::new(gaussian([-0.5, 0.0], w), gaussian([0.7, 0.2], w)).unwrap();
        let s = spec(a1, 2.0, beta);
        let p = energy_breakdown(&pair, &s).unwrap();
        let resum = p.component_energy(0) + p.component_energy(1) + beta * p.interaction;
        prop_assert!((resum - p.total()).abs() <= 1e-12 * p.total().abs().max(1.0));
        prop_assert!(p.interaction >= 0.0 && p.potential[0] >= 0.0 && p.potential[1] >= 0.0);
    }

    // Below a* the quartic term never beats the kinetic one for unit mass.
    #[test]
    fn subcritical_kinetic_dominates(w in 0.2..2.0f64, frac in 0.0..0.999f64) {
        let u = gaussian([0.0, 0.0], w);
        let a = frac * profile().a_star();
        prop_assert!(u.gradient_sq_integral() - 0.5 * a * u.quartic() > 0.0);
    }

    #[test]
    fn normalize_gives_unit_mass(c0 in -2.0..2.0f64, c1 in -2.0..2.0f64, w in 0.3..1.5f64) {
        prop_assert!((gaussian([c0, c1], w).mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn peak_tracks_center(c0 in -2.0..2.0f64, c1 in -2.0..2.0f64, w in 0.5..1.2f64) {
        let pk = find_peak(&gaussian([c0, c1], w)).unwrap();
        let h = grid().spacing();
        prop_assert!((pk.location[0] - c0).abs() < h / 2.0 && (pk.location[1] - c1).abs() < h / 2.0);
        prop_assert_eq!(pk.count, 1);
    }

    #[test]
    fn power_law_recovers_exponent(k in -3.0..3.0f64, c in 0.1..10.0f64, x0 in 0.01..1.0f64, r in 1.2..4.0f64) {
        let xs: Vec<f64> = (0..5).map(|i| x0 * r.powi(i)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(k)).collect();
        let f = fit_power_law(&xs, &ys, None).unwrap();
        prop_assert!((f.exponent - k).abs() < 1e-9);
        prop_assert!((f.log_prefactor - c.ln()).abs() < 1e-8);
    }

    #[test]
    fn l_regime_ignores_scale(v in prop::collection::vec(1e-6..1e3f64, 3..6), s in 1e-3..1e3f64) {
        let th = LThresholds::default();
        let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
        let a = classify_l_values(&v, &th).unwrap();
        let b = classify_l_values(&scaled, &th).unwrap();
        prop_assert_eq!(a.regime, b.regime);
    }

    #[test]
    fn cutoff_is_a_partition(r in -1.0..4.0f64) {
        let c = cutoff(r);
        prop_assert!((0.0..=1.0).contains(&c));
        if r <= 1.0 { prop_assert_eq!(c, 1.0); }
        if r >= 2.0 { prop_assert_eq!(c, 0.0); }
        prop_assert!(cutoff(r + 0.05) <= c);
    }

    #[test]
    fn lemma_a_minimum_lies_in_bracket(lk in 5.0..7.0f64, lm in 0.0..2.0f64, p in 1.0..3.0f64) {
        let a_star = profile().a_star();
        let params = LemmaAParams { kappa: 10f64.powf(lk), m: 10f64.powf(lm), p, a: 0.999 * a_star, a_star };
        let r = lemma_a_minimize(&params).unwrap();
        prop_assert!(r.bracket_holds);
        prop_assert!(params.f_prime(r.s1).abs() <= 1e-8 * params.f_prime(3.0_f64.exp()).abs());
        prop_assert!(params.f(r.s1) <= params.f(r.s1 * 1.01) && params.f(r.s1) <= params.f(r.s1 * 0.99));
    }

    #[test]
    fn csv_floats_round_trip(x in prop::num::f64::ANY) {
        let back: f64 = fmt_f64(x).parse().unwrap();
        prop_assert!(back.to_bits() == x.to_bits() || (x.is_nan() && back.is_nan()));
    }

    #[test]
    fn derived_columns_survive_serialization(q1 in 1e-3..1e3f64, q2 in 1e-3..1e3f64, f in 0.5..0.9999f64) {
        let a_star = profile().a_star();
        let t = spec(0.0, 0.0, 1.0);
        let mut r = failed_record(&t, a_star, f);
        r.status = "ok".into();
        r.quartic1 = q1;
        r.quartic2 = q2;
        (r.eps1, r.eps2, r.eps_tilde1, r.eps_tilde2) = r.rederive();
        prop_assert_eq!(r.eps_tilde1, quartic_scale(q1));
        let bytes = sweep_table(std::slice::from_ref(&r)).to_bytes().unwrap();
        let back = parse_sweep_table(&CsvTable::parse(std::str::from_utf8(&bytes).unwrap()).unwrap()).unwrap();
        let d = back[0].rederive();
        prop_assert_eq!(d.0.to_bits(), back[0].eps1.to_bits());
        prop_assert_eq!(d.1.to_bits(), back[0].eps2.to_bits());
        prop_assert_eq!(d.2.to_bits(), back[0].eps_tilde1.to_bits());
        prop_assert_eq!(d.3.to_bits(), back[0].eps_tilde2.to_bits());
    }
}

fn failed_record(t: &ProblemSpec, a_star: f64, f: f64) -> SweepRecord {
    let fields = {
        let mut v: Vec<String> = SweepRecord::csv_header().iter().map(|_| "NaN".to_string()).collect();
        v[0] = "0".into();
        v[1] = "failed: placeholder".into();
        v[2] = fmt_f64(f * a_star);
        v[3] = fmt_f64(f * a_star);
        v[4] = fmt_f64(t.beta);
        v[5] = fmt_f64(t.trap1.exponent);
        v[6] = fmt_f64(t.trap2.exponent);
        v[7] = fmt_f64(a_star);
        for k in [28, 29, 39, 42] {
            v[k] = "0".into();
        }
        for k in [30, 31, 40] {
            v[k] = "false".into();
        }
        v
    };
    SweepRecord::from_csv_fields(&fields.iter().map(String::as_str).collect::<Vec<_>>()).unwrap()
}

#[test]
fn field_dump_survives_solver_output_shapes() {
    let u = gaussian([0.1, -0.2], 0.8);
    let v = gaussian([-0.4, 0.3], 0.6);
    let (h, back) = parse_field_dump(&field_dump_bytes(&[("u1", &u), ("u2", &v)]).unwrap()).unwrap();
    assert_eq!(h.points_per_side, 64);
    assert_eq!(back[0], u);
    assert_eq!(back[1], v);
}
