use filippov_core::field::*;
use filippov_core::flow::*;
use filippov_core::manifold::*;
use proptest::prelude::*;

fn trig(u: f64, a: f64, v: f64, b: f64) -> TrigField {
    TrigField::new(
        TrigComponent { c0: u, cos: vec![a], ..Default::default() },
        TrigComponent { c0: v, sin: vec![b], ..Default::default() },
    )
}

fn quiet(t_max: f64) -> IntegrationOptions {
    IntegrationOptions::default().with_t_max(t_max)
}

/// Position after time `t` from `(x0, y0)` under `(a, s1)` above and `(b, s2)`
/// below, both with positive vertical speed.
fn affine(a: f64, s1: f64, b: f64, s2: f64, x0: f64, y0: f64, mut t: f64) -> (f64, f64) {
    let (mut x, mut y) = (x0, y0);
    loop {
        let lower = y.rem_euclid(1.0) < 0.5;
        let (u, v) = if lower { (b, s2) } else { (a, s1) };
        let to_edge = ((y * 2.0).floor() + 1.0) / 2.0 - y;
        let dt = to_edge / v;
        if dt >= t {
            return (x + u * t, y + v * t);
        }
        x += u * dt;
        y = ((y * 2.0).floor() + 1.0) / 2.0;
        t -= dt;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn regimes_stay_in_their_halves(
        u in 0.3f64..1.0, a in -0.3f64..0.3, v in -1.0f64..1.0, b in -0.8f64..0.8,
        u2 in 0.3f64..1.0, v2 in -1.0f64..1.0, b2 in -0.8f64..0.8,
        x0 in 0.0f64..1.0, y0 in 0.02f64..0.98,
    ) {
        let f = PiecewiseField::new(trig(u, a, v, b), trig(u2, 0.0, v2, b2), ManifoldModel::Torus);
        let tr = integrate(&f, wrap(x0, y0, ManifoldModel::Torus).unwrap(), &quiet(4.0), Direction::Forward).unwrap();
        for seg in &tr.segments {
            for s in &seg.samples {
                let y = s.p.y;
                match seg.regime {
                    Regime::FreeMinus => prop_assert!(y <= 0.5 + TAU_ON_SIGMA || y >= 1.0 - TAU_ON_SIGMA, "{y}"),
                    Regime::FreePlus => prop_assert!(y >= 0.5 - TAU_ON_SIGMA || y <= TAU_ON_SIGMA, "{y}"),
                    Regime::Sliding => {
                        let h = y.min((y - 0.5).abs()).min(1.0 - y);
                        prop_assert!(h <= TAU_ON_SIGMA, "{y}");
                    }
                }
            }
        }
        for e in tr.events_of(EventKind::EnterSliding) {
            let sigma = if e.detail == "sigma1" { SigmaId::Sigma1 } else { SigmaId::Sigma2 };
            let (p, q) = f.normals(sigma, e.location.x);
            prop_assert!(p < TAU_SIGN && q > -TAU_SIGN, "entry at {:?}: normals {p} {q}", e.location);
        }
        let again = integrate(&f, wrap(x0, y0, ManifoldModel::Torus).unwrap(), &quiet(4.0), Direction::Forward).unwrap();
        prop_assert_eq!(&tr.events, &again.events);
    }

    #[test]
    fn crossing_flow_reverses(
        u in -1.0f64..1.0, v in 0.4f64..1.0, b in -0.3f64..0.3,
        u2 in -1.0f64..1.0, v2 in 0.4f64..1.0, b2 in -0.3f64..0.3,
        x0 in 0.0f64..1.0, y0 in 0.02f64..0.48, t_max in 0.5f64..4.0,
    ) {
        let f = PiecewiseField::new(trig(u, 0.0, v, b), trig(u2, 0.0, v2, b2), ManifoldModel::Torus);
        let p0 = wrap(x0, y0, ManifoldModel::Torus).unwrap();
        let opts = quiet(t_max);
        let fwd = integrate(&f, p0, &opts, Direction::Forward).unwrap();
        prop_assert_eq!(fwd.terminal_event().kind, EventKind::TimeLimit);
        let back = integrate(&f, fwd.final_point(), &opts, Direction::Backward).unwrap();
        let d = quotient_distance(&back.final_point(), &p0).unwrap();
        prop_assert!(d < 1e3 * opts.event_tol, "{d}");
    }

    #[test]
    fn constant_fields_follow_affine_flow(
        a in -1.5f64..1.5, s1 in 0.3f64..2.0, b in -1.5f64..1.5, s2 in 0.3f64..2.0,
        x0 in 0.0f64..1.0, y0 in 0.01f64..0.49,
    ) {
        let f = PiecewiseField::new(TrigField::constant(a, s1), TrigField::constant(b, s2), ManifoldModel::Torus);
        let opts = quiet(3.0);
        let tr = integrate(&f, wrap(x0, y0, ManifoldModel::Torus).unwrap(), &opts, Direction::Forward).unwrap();
        for s in tr.samples() {
            let (x, y) = affine(a, s1, b, s2, x0, y0, s.t);
            let d = quotient_distance(&s.p, &wrap(x, y, ManifoldModel::Torus).unwrap()).unwrap();
            prop_assert!(d <= 10.0 * opts.rel_tol * (1.0 + s.t * (a.abs() + b.abs() + s1 + s2)), "t = {}: {d}", s.t);
        }
    }
}
