use filippov_core::exact::ExactReal;
use filippov_core::field::*;
use filippov_core::flow::*;
use filippov_core::manifold::*;
use filippov_core::maps::*;
use filippov_core::scenarios::*;
use proptest::prelude::*;

fn opts() -> MapOptions {
    MapOptions { n_grid: 128, ..Default::default() }
}

#[test]
fn half_return_preserves_order() {
    for s in [chaotic_torus(), two_cycle_band()] {
        let mut prev: Option<f64> = None;
        for k in 0..100 {
            let xi = 0.01 + 0.48 * k as f64 / 99.0;
            match half_return(&s.field, &SectionPoint::lambda(xi).unwrap(), &opts()) {
                Ok(r) => {
                    if let Some(p) = prev {
                        assert!(r.pi_q.coord > p, "{}: π not increasing at ξ = {xi}", s.name);
                    }
                    prev = Some(r.pi_q.coord);
                }
                // leaving the strip ends the continuity interval
                Err(_) => prev = None,
            }
        }
    }
}

#[test]
fn roots_are_small_and_change_sign() {
    let s = two_cycle_band();
    let scan = displacement_roots(&s.field, &opts()).unwrap();
    assert_eq!(scan.roots.len(), 2);
    for r in &scan.roots {
        assert!(r.d.abs() < opts().tau_root);
        let d = |xi: f64| half_return(&s.field, &SectionPoint::lambda(xi).unwrap(), &opts()).unwrap().d;
        let (lo, hi) = (d(r.q.coord - 1e-4), d(r.q.coord + 1e-4));
        assert!(lo * hi < 0.0, "no sign change at {}", r.q.coord);
    }
}

fn exact_small() -> impl Strategy<Value = (i32, i32)> {
    (-6i32..=6, 1i32..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn periodic_orbits_close_after_n0((an, ad) in exact_small(), (bn, bd) in exact_small(), x0 in 0.0f64..1.0) {
        let a: ExactReal = format!("{an}/{ad}").parse().unwrap();
        let b: ExactReal = format!("{bn}/{bd}").parse().unwrap();
        let one: ExactReal = "1".parse().unwrap();
        let Periodicity::Periodic { n0, .. } = periodicity_test(&a, &b, &one, &one).unwrap() else {
            panic!("rational shift must be periodic");
        };
        prop_assume!(n0 <= 40);
        let f = PiecewiseField::new(
            TrigField::constant(a.to_f64(), 1.0),
            TrigField::constant(b.to_f64(), 1.0),
            ManifoldModel::Torus,
        );
        let pts = filippov_core::classify::crossing_sequence(&f, x0, n0 as usize + 1, Direction::Forward, None).unwrap();
        let d = quotient_distance(&pts[0], &pts[n0 as usize]).unwrap();
        prop_assert!(d < 1e-7, "n0 = {n0}: {d}");
    }

    #[test]
    fn closed_form_matches_integrator(a in -2.0f64..2.0, b in -2.0f64..2.0, s1 in 0.4f64..2.0, s2 in 0.4f64..2.0, x0 in 0.0f64..1.0, turns in 1i64..4) {
        let nf = NormalForm { a, b, sigma1: s1, sigma2: s2 };
        let f = PiecewiseField::new(TrigField::constant(a, s1), TrigField::constant(b, s2), ManifoldModel::Torus);
        let expect = first_return_crossing(&nf, &SectionPoint::sigma1(x0), 2 * turns).unwrap();
        let opts = IntegrationOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            event_tol: 1e-13,
            ..IntegrationOptions::default().with_t_max(100.0)
        };
        let mut n = 0;
        let mut stop = |e: &EventRecord| {
            if e.kind == EventKind::CrossSigma { n += 1; }
            n >= 2 * turns
        };
        let tr = integrate_until(&f, wrap(x0, 0.0, ManifoldModel::Torus).unwrap(), &opts, Direction::Forward, &mut stop).unwrap();
        let d = quotient_distance(&tr.final_point(), &expect.to_point(ManifoldModel::Torus)).unwrap();
        prop_assert!(d < 1e-8, "{d}");
    }
}
