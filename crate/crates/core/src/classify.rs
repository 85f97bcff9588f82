//! Global verdicts: periodic and dense crossing flows, sliding attractors,
//! limit-cycle catalogs with minimal bands, chaos diagnostics on the torus
//! and the homoclinic/chaotic/residual decomposition of the sphere.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactReal;
use crate::field::{decompose_sigma, lie_at, PiecewiseField, RegionLabel, SigmaId, Visibility, TAU_ON_SIGMA, TAU_SIGN};
use crate::flow::{integrate, integrate_until, Direction, EventKind, EventRecord, IntegrationOptions, Trajectory};
use crate::manifold::{manifold_diameter, quotient_distance, unit_mod, wrap, ManifoldModel, QuotientPoint};
use crate::maps::{
    displacement_roots, find_p_star, graph_through, periodicity_test, scan_displacement, CycleStability, MapOptions,
    MapRoot, PStar, Periodicity, Section, SectionPoint,
};
use crate::ode::{flow_smooth, SmoothOpts, SmoothStop};
use crate::quasi::R2;
use crate::roots::scan_circle;

/// A named numeric check with the tolerance it was held to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Evidence {
    fn below(name: &str, value: f64, tolerance: f64) -> Self {
        Evidence {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }

    fn above(name: &str, value: f64, tolerance: f64) -> Self {
        Evidence {
            name: name.into(),
            value,
            tolerance,
            passed: value > tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquidistributionStat {
    pub n: usize,
    pub discrepancy: f64,
    pub min_return_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalBand {
    pub lower: MapRoot,
    pub upper: MapRoot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum Verdict {
    PeriodicFoliation { n0: u64, shift_per_turn: String },
    Equidistributing { shift_per_turn: String, stat: EquidistributionStat },
    SlidingAttractor { sigma: SigmaId, speed: f64, repeller: Option<SigmaId> },
    SlidingRepeller { sigma: SigmaId, speed: f64 },
    LimitCycles { section: Section, roots: Vec<MapRoot> },
    MinimalBands { bands: Vec<MinimalBand>, roots: Vec<MapRoot> },
    CenterBand { start: f64, end: f64 },
    /// No closed orbit crosses the section; the displacement keeps one sign.
    NoClosedOrbits { displacement_sign: i8 },
    NorthSouth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub verdict: Verdict,
    pub evidence: Vec<Evidence>,
}

fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (unit_mod(a) - unit_mod(b)).abs();
    d.min(1.0 - d)
}

/// Star discrepancy of the first `n` points and their closest return to the
/// first one.
pub fn equidistribution_stat(points: &[f64], n: usize) -> Result<EquidistributionStat> {
    if n < 2 || points.len() < n {
        return Err(Error::domain(format!("need at least 2 and at most {} points, got n = {n}", points.len())));
    }
    let mut u: Vec<f64> = points[..n].iter().map(|&p| unit_mod(p)).collect();
    let x0 = u[0];
    let gap = u[1..].iter().map(|&p| circle_dist(p, x0)).fold(f64::INFINITY, f64::min);
    u.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &ui)| ((i + 1) as f64 / nf - ui).max(ui - i as f64 / nf))
        .fold(0.0, f64::max);
    Ok(EquidistributionStat {
        n,
        discrepancy: d,
        min_return_gap: gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularOptions {
    pub n_returns: usize,
    pub x0: f64,
    pub reach_samples: usize,
    pub reach_time: f64,
    pub seed: u64,
}

impl Default for RegularOptions {
    fn default() -> Self {
        RegularOptions {
            n_returns: 1000,
            x0: 0.1,
            reach_samples: 100,
            reach_time: 2.0,
            seed: 0,
        }
    }
}

/// Abscissae of successive crossings of `sigma` (skipping crossings of the
/// other circle), `count` of them, starting from `(x0, 1/4)`.
pub fn crossing_sequence(
    x: &PiecewiseField,
    x0: f64,
    count: usize,
    direction: Direction,
    only: Option<SigmaId>,
) -> Result<Vec<QuotientPoint>> {
    let opts = IntegrationOptions {
        record_samples: false,
        t_max: 4.0 * count as f64 + 10.0,
        ..Default::default()
    };
    let p0 = wrap(x0, 0.25, x.model())?;
    let mut out = Vec::with_capacity(count);
    let mut stop = |e: &EventRecord| {
        if e.kind == EventKind::CrossSigma && only.is_none_or(|s| e.detail == s.to_string()) {
            out.push(e.location);
        }
        out.len() >= count
    };
    let tr = integrate_until(x, p0, &opts, direction, &mut stop)?;
    if out.len() < count {
        return Err(Error::Numeric(format!(
            "only {} crossings before {:?}",
            out.len(),
            tr.terminal_event().kind
        )));
    }
    Ok(out)
}

fn sign_of(v: &ExactReal) -> f64 {
    v.to_f64().signum()
}

/// Verdict for the constant normal form `X⁺ = (a, σ₁)`, `X⁻ = (b, σ₂)`.
pub fn classify_regular(
    a: &ExactReal,
    b: &ExactReal,
    s1: &ExactReal,
    s2: &ExactReal,
    model: ManifoldModel,
    opts: &RegularOptions,
) -> Result<ClassificationReport> {
    for s in [s1, s2] {
        let f = s.to_f64();
        if !s.is_rational() || (f != 1.0 && f != -1.0) {
            return Err(Error::domain(format!("σ must be ±1, got {s}")));
        }
    }
    let (af, bf, f1, f2) = (a.to_f64(), b.to_f64(), s1.to_f64(), s2.to_f64());
    let x = PiecewiseField::new(
        crate::field::TrigField::constant(af, f1),
        crate::field::TrigField::constant(bf, f2),
        model,
    );
    let crossing = sign_of(s1) == sign_of(s2);
    let dir = if f1 > 0.0 { Direction::Forward } else { Direction::Backward };
    let mut evidence = Vec::new();
    let verdict = match (model, crossing) {
        (ManifoldModel::Torus, true) => match periodicity_test(a, b, s1, s2)? {
            Periodicity::Periodic { n0, shift_per_turn } => {
                let pts = crossing_sequence(&x, opts.x0, n0 as usize + 1, dir, None)?;
                let closure = quotient_distance(&pts[0], &pts[n0 as usize])?;
                evidence.push(Evidence::below("closure_distance", closure, 1e-7));
                // no earlier even closure
                let early = (2..n0 as usize)
                    .step_by(2)
                    .map(|k| quotient_distance(&pts[0], &pts[k]).unwrap_or(0.0))
                    .fold(f64::INFINITY, f64::min);
                if n0 > 2 {
                    evidence.push(Evidence::above("earliest_false_closure", early, 1e-7));
                }
                Verdict::PeriodicFoliation { n0, shift_per_turn }
            }
            Periodicity::Dense { shift_per_turn } => {
                let pts = crossing_sequence(&x, opts.x0, opts.n_returns, dir, Some(SigmaId::Sigma1))?;
                let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
                let big = equidistribution_stat(&xs, opts.n_returns)?;
                let small = equidistribution_stat(&xs, (opts.n_returns / 10).max(2))?;
                evidence.push(Evidence::below("discrepancy", big.discrepancy, 0.05));
                evidence.push(Evidence::below("discrepancy_decay", big.discrepancy - small.discrepancy, 0.0));
                evidence.push(Evidence::above("min_return_gap", big.min_return_gap, 1e-9));
                Verdict::Equidistributing {
                    shift_per_turn,
                    stat: big,
                }
            }
        },
        (ManifoldModel::Torus, false) => {
            let attracting = x
                .sigmas()
                .iter()
                .copied()
                .find(|&s| decompose_sigma(&x, s).intervals.iter().all(|i| i.label == RegionLabel::StableSliding))
                .ok_or_else(|| Error::Numeric("no attracting circle found".into()))?;
            let repeller = x.sigmas().iter().copied().find(|&s| s != attracting);
            let speed = x.sliding_velocity(attracting, 0.0);
            evidence.push(Evidence::below(
                "measured_speed_error",
                (measured_sliding_speed(&x, attracting, 1.0)? - speed).abs(),
                1e-6,
            ));
            let frac = reach_fraction(&x, attracting, opts)?;
            evidence.push(Evidence::above("reach_fraction", frac, 1.0 - 1e-12));
            Verdict::SlidingAttractor {
                sigma: attracting,
                speed,
                repeller,
            }
        }
        (ManifoldModel::Sphere, true) => {
            let p0 = wrap(opts.x0, if f1 > 0.0 { 0.01 } else { 0.99 }, model)?;
            let tr = integrate(&x, p0, &IntegrationOptions::default().with_t_max(10.0), Direction::Forward)?;
            let end = tr.terminal_event();
            let expect = if f1 > 0.0 { "north" } else { "south" };
            let ok = end.kind == EventKind::HitPole && end.detail == expect;
            evidence.push(Evidence {
                name: "hits_opposite_pole".into(),
                value: if ok { 1.0 } else { 0.0 },
                tolerance: 1.0,
                passed: ok,
            });
            Verdict::NorthSouth
        }
        (ManifoldModel::Sphere, false) => {
            let speed = x.sliding_velocity(SigmaId::Sigma2, 0.0);
            if f1 < 0.0 {
                evidence.push(Evidence::below(
                    "measured_speed_error",
                    (measured_sliding_speed(&x, SigmaId::Sigma2, 1.0)? - speed).abs(),
                    1e-6,
                ));
                Verdict::SlidingAttractor {
                    sigma: SigmaId::Sigma2,
                    speed,
                    repeller: None,
                }
            } else {
                Verdict::SlidingRepeller {
                    sigma: SigmaId::Sigma2,
                    speed,
                }
            }
        }
    };
    Ok(ClassificationReport { verdict, evidence })
}

/// Lifted x-speed along a stable sliding circle measured over `duration`.
pub fn measured_sliding_speed(x: &PiecewiseField, sigma: SigmaId, duration: f64) -> Result<f64> {
    let x0 = 0.123;
    let p0 = wrap(x0, sigma.level(crate::field::Side::Minus), x.model())?;
    let opts = IntegrationOptions {
        record_samples: false,
        ..IntegrationOptions::default().with_t_max(duration)
    };
    let tr = integrate(x, p0, &opts, Direction::Forward)?;
    if tr.segments.first().map(|s| s.regime) != Some(crate::flow::Regime::Sliding) {
        return Err(Error::Numeric(format!("start on {sigma} did not slide")));
    }
    let winds: f64 = tr
        .events_of(EventKind::WrapX)
        .map(|e| if e.detail == "+1" { 1.0 } else { -1.0 })
        .sum();
    let end = tr.final_point();
    Ok((end.x + winds - x0) / tr.t_end())
}

fn reach_fraction(x: &PiecewiseField, sigma: SigmaId, opts: &RegularOptions) -> Result<f64> {
    let pts = R2::new(opts.seed).take(opts.reach_samples).collect::<Vec<_>>();
    let io = IntegrationOptions {
        record_samples: false,
        ..IntegrationOptions::default().with_t_max(opts.reach_time)
    };
    let hits: Vec<bool> = pts
        .par_iter()
        .map(|p| {
            let q = wrap(p[0], p[1], x.model()).expect("finite sample");
            let mut stop = |e: &EventRecord| e.kind == EventKind::EnterSliding && e.detail == sigma.to_string();
            integrate_until(x, q, &io, Direction::Forward, &mut stop)
                .map(|t| {
                    let e = t.terminal_event();
                    (e.kind == EventKind::EnterSliding || t.segments[0].regime == crate::flow::Regime::Sliding)
                        && e.t <= opts.reach_time
                })
                .unwrap_or(false)
        })
        .collect();
    Ok(hits.iter().filter(|&&h| h).count() as f64 / pts.len() as f64)
}

/// Cubic-Hermite graph `y(x)` over one turn of an `X⁻` orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitGraph {
    pub ys: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl OrbitGraph {
    pub fn through_lambda(x: &PiecewiseField, xi: f64, m: usize) -> Result<Self> {
        let xs: Vec<f64> = (1..=m).map(|k| k as f64 / m as f64).collect();
        let mut ys = vec![xi];
        ys.extend(graph_through(x, 0.0, xi, &xs, 1e-13, 1e-15)?);
        let f = x.minus();
        let slopes = ys
            .iter()
            .enumerate()
            .map(|(k, &y)| {
                let v = f.eval(k as f64 / m as f64, y);
                v[1] / v[0]
            })
            .collect();
        Ok(OrbitGraph { ys, slopes })
    }

    pub fn y_at(&self, x: f64) -> f64 {
        let m = self.ys.len() - 1;
        let s = unit_mod(x) * m as f64;
        let i = (s.floor() as usize).min(m - 1);
        let h = 1.0 / m as f64;
        let t = s - i as f64;
        let (h00, h10, h01, h11) = (
            2.0 * t * t * t - 3.0 * t * t + 1.0,
            t * t * t - 2.0 * t * t + t,
            -2.0 * t * t * t + 3.0 * t * t,
            t * t * t - t * t,
        );
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub tested: usize,
    pub contained: usize,
    pub max_excursion: f64,
}

/// Sample points strictly between the two cycles and verify they stay
/// between them for `t ∈ [0, t_max]`.
pub fn band_invariance(x: &PiecewiseField, band: &MinimalBand, samples: usize, t_max: f64, seed: u64) -> Result<BandCheck> {
    let lo = OrbitGraph::through_lambda(x, band.lower.q.coord, 2000)?;
    let hi = OrbitGraph::through_lambda(x, band.upper.q.coord, 2000)?;
    let pts: Vec<[f64; 2]> = R2::new(seed).take(samples).collect();
    let opts = IntegrationOptions::default().with_t_max(t_max);
    let res: Vec<Result<f64>> = pts
        .par_iter()
        .map(|p| {
            let s = 0.02 + 0.96 * p[1];
            let y0 = lo.y_at(p[0]) + s * (hi.y_at(p[0]) - lo.y_at(p[0]));
            let tr = integrate(x, wrap(p[0], y0, x.model())?, &opts, Direction::Forward)?;
            let mut worst: f64 = 0.0;
            for smp in tr.samples() {
                let (a, b) = (lo.y_at(smp.p.x), hi.y_at(smp.p.x));
                let out = (a - smp.p.y).max(smp.p.y - b).max(0.0);
                worst = worst.max(out);
            }
            if tr.terminal_event().kind != EventKind::TimeLimit {
                worst = worst.max(1.0);
            }
            Ok(worst)
        })
        .collect();
    let mut check = BandCheck {
        tested: samples,
        contained: 0,
        max_excursion: 0.0,
    };
    for r in res {
        let w = r?;
        check.max_excursion = check.max_excursion.max(w);
        if w <= TAU_ON_SIGMA {
            check.contained += 1;
        }
    }
    Ok(check)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogOptions {
    pub map: MapOptions,
    pub band_samples: usize,
    pub band_t_max: f64,
    pub seed: u64,
}

impl Default for CatalogOptions {
    fn default() -> Self {
        CatalogOptions {
            map: MapOptions::default(),
            band_samples: 100,
            band_t_max: 50.0,
            seed: 0,
        }
    }
}

/// Limit cycles from the displacement roots, and the minimal bands between
/// neighbouring cycles of opposite stability.
pub fn catalog_limit_cycles(x: &PiecewiseField, opts: &CatalogOptions) -> Result<ClassificationReport> {
    let scan = displacement_roots(x, &opts.map)?;
    let mut evidence = Vec::new();
    for r in &scan.roots {
        evidence.push(Evidence::below("root_residual", r.d.abs(), opts.map.tau_root));
    }
    if scan.roots.is_empty() {
        if let Some(&(a, b)) = scan.center_bands.first() {
            evidence.push(Evidence::above("center_band_width", b - a, 0.0));
            return Ok(ClassificationReport {
                verdict: Verdict::CenterBand { start: a, end: b },
                evidence,
            });
        }
        if let Some(s) = scan.constant_sign() {
            return Ok(ClassificationReport {
                verdict: Verdict::NoClosedOrbits { displacement_sign: s },
                evidence,
            });
        }
    }
    let mut bands = Vec::new();
    if scan.section == Section::Lambda {
        for w in scan.roots.windows(2) {
            let hyperbolic = |r: &MapRoot| r.stability != CycleStability::NonHyperbolic;
            if hyperbolic(&w[0]) && hyperbolic(&w[1]) && w[0].stability != w[1].stability {
                bands.push(MinimalBand {
                    lower: w[0],
                    upper: w[1],
                });
            }
        }
    }
    if bands.is_empty() {
        return Ok(ClassificationReport {
            verdict: Verdict::LimitCycles {
                section: scan.section,
                roots: scan.roots,
            },
            evidence,
        });
    }
    for b in &bands {
        let interior = scan
            .roots
            .iter()
            .filter(|r| r.q.coord > b.lower.q.coord && r.q.coord < b.upper.q.coord)
            .count();
        evidence.push(Evidence::below("interior_roots", interior as f64, 0.5));
        if opts.band_samples > 0 {
            let c = band_invariance(x, b, opts.band_samples, opts.band_t_max, opts.seed)?;
            evidence.push(Evidence::below("band_max_excursion", c.max_excursion, TAU_ON_SIGMA * (1.0 + 1e-9)));
        }
    }
    Ok(ClassificationReport {
        verdict: Verdict::MinimalBands {
            bands,
            roots: scan.roots,
        },
        evidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaosOptions {
    pub tau_hit: f64,
    pub transit_t_max: f64,
    pub ball_radius: f64,
    /// Upper bound on the `(U, V)` pairs tried for transitivity witnesses.
    pub witness_pairs: usize,
    /// The search stops once this many witnesses are found.
    pub witness_target: usize,
    pub witness_t_max: f64,
    pub sensitivity_points: usize,
    pub sensitivity_eps: f64,
    pub sensitivity_t_max: f64,
    pub seed: u64,
}

impl Default for ChaosOptions {
    fn default() -> Self {
        ChaosOptions {
            tau_hit: 1e-4,
            transit_t_max: 100.0,
            ball_radius: 0.05,
            witness_pairs: 200,
            witness_target: 10,
            witness_t_max: 50.0,
            sensitivity_points: 40,
            sensitivity_eps: 1e-3,
            sensitivity_t_max: 20.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub u_center: QuotientPoint,
    pub v_center: QuotientPoint,
    /// Start point inside `U`.
    pub start: QuotientPoint,
    pub t0: f64,
    pub landing: QuotientPoint,
    pub backward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub r: f64,
    pub eps: f64,
    pub tested: usize,
    /// Points with a neighbour whose trajectory set lies farther than `r`
    /// (supremum of pairwise distances).
    pub passed: usize,
    /// Points where even the same-time distance exceeds `r` at some time.
    pub pointwise_passed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosDiagnostics {
    pub p_star: QuotientPoint,
    pub q_star: SectionPoint,
    pub displacement_sign: i8,
    pub transit_tested: usize,
    pub through_p_star_fraction: f64,
    pub transitivity_witnesses: Vec<Witness>,
    pub witness_pairs_tried: usize,
    pub sensitivity: Sensitivity,
}

fn near(p: &QuotientPoint, q: &QuotientPoint, tol: f64) -> bool {
    quotient_distance(p, q).map(|d| d < tol).unwrap_or(false)
}

/// Whether the forward trajectory from `p` passes within `tau` of `p*`.
pub fn reaches_p_star(x: &PiecewiseField, p: QuotientPoint, p_star: &QuotientPoint, tau: f64, t_max: f64) -> Result<(bool, Trajectory)> {
    let opts = IntegrationOptions {
        record_samples: false,
        ..IntegrationOptions::default().with_t_max(t_max)
    };
    let mut stop = |e: &EventRecord| {
        matches!(e.kind, EventKind::ExitSlidingAtFold | EventKind::HitSigma) && near(&e.location, p_star, tau)
    };
    let tr = integrate_until(x, p, &opts, Direction::Forward, &mut stop)?;
    let e = tr.terminal_event();
    let hit = matches!(e.kind, EventKind::ExitSlidingAtFold | EventKind::HitSigma) && near(&e.location, p_star, tau);
    Ok((hit, tr))
}

fn off_sigma(x: &PiecewiseField, p: [f64; 2]) -> QuotientPoint {
    let mut y = p[1];
    for &s in x.sigmas() {
        let l = s.level(crate::field::Side::Minus);
        if (y - l).abs() < 1e-6 {
            y = l + 1e-6;
        }
    }
    wrap(p[0], y.min(1.0 - 1e-6), x.model()).expect("finite sample")
}

fn offsets(radius: f64) -> Vec<(f64, f64)> {
    let mut v = vec![(0.0, 0.0)];
    for ring in [0.4, 0.8] {
        for k in 0..8 {
            let a = k as f64 * std::f64::consts::PI / 4.0 + ring;
            v.push((ring * radius * a.cos(), ring * radius * a.sin()));
        }
    }
    v
}

fn replay(x: &PiecewiseField, start: QuotientPoint, t0: f64) -> Result<QuotientPoint> {
    let opts = IntegrationOptions {
        record_samples: false,
        max_step: 0.01,
        ..IntegrationOptions::default().with_t_max(t0)
    };
    let tr = integrate(x, start, &opts, Direction::Forward)?;
    if tr.terminal_event().kind != EventKind::TimeLimit {
        return Err(Error::Numeric("replay ended before t0".into()));
    }
    Ok(tr.final_point())
}

fn find_witness(x: &PiecewiseField, u: QuotientPoint, v: QuotientPoint, opts: &ChaosOptions) -> Option<Witness> {
    let r = opts.ball_radius;
    let dense = IntegrationOptions {
        max_step: 0.01,
        ..IntegrationOptions::default().with_t_max(opts.witness_t_max)
    };
    let model = x.model();
    let verify = |start: QuotientPoint, t0: f64, backward: bool| -> Option<Witness> {
        if t0 <= 0.0 || !near(&start, &u, r) {
            return None;
        }
        let landing = replay(x, start, t0).ok()?;
        near(&landing, &v, r).then_some(Witness {
            u_center: u,
            v_center: v,
            start,
            t0,
            landing,
            backward,
        })
    };
    for (dx, dy) in offsets(r) {
        let Ok(start) = wrap(u.x + dx, u.y + dy, model) else { continue };
        if let Ok(tr) = integrate(x, start, &dense, Direction::Forward) {
            for s in tr.samples() {
                if near(&s.p, &v, 0.8 * r) {
                    if let Some(w) = verify(start, s.t, false) {
                        return Some(w);
                    }
                    break;
                }
            }
        }
    }
    for (dx, dy) in offsets(r) {
        let Ok(end) = wrap(v.x + dx, v.y + dy, model) else { continue };
        if let Ok(tr) = integrate(x, end, &dense, Direction::Backward) {
            for s in tr.samples() {
                if near(&s.p, &u, 0.8 * r) {
                    if let Some(w) = verify(s.p, -s.t, true) {
                        return Some(w);
                    }
                    break;
                }
            }
        }
    }
    None
}

fn sup_pair_distance(a: &[QuotientPoint], b: &[QuotientPoint], r: f64) -> f64 {
    let mut best: f64 = 0.0;
    for p in a {
        for q in b {
            let d = quotient_distance(p, q).unwrap_or(0.0);
            if d > best {
                best = d;
                if best > r {
                    return best;
                }
            }
        }
    }
    best
}

/// Transit through `p*`, transitivity witnesses and sensitive dependence.
pub fn chaos_check(x: &PiecewiseField, samples: usize, opts: &ChaosOptions) -> Result<ChaosDiagnostics> {
    let map_opts = MapOptions {
        n_grid: 128,
        ..Default::default()
    };
    let scan = scan_displacement(x, Section::Lambda, &map_opts)?;
    let vals: Vec<f64> = scan.grid.iter().filter_map(|g| g.1).collect();
    let pos = vals.iter().any(|&d| d > map_opts.tau_root);
    let neg = vals.iter().any(|&d| d < -map_opts.tau_root);
    if pos && neg {
        return Err(Error::Refused(
            "displacement changes sign on Λ, so some orbits avoid p*; use catalog_limit_cycles".into(),
        ));
    }
    let sign = if pos { 1 } else if neg { -1 } else { 0 };
    let PStar { p_star, q_star, .. } = find_p_star(x)?;

    let pts: Vec<QuotientPoint> = R2::new(opts.seed).take(samples).map(|p| off_sigma(x, p)).collect();
    let transit: Vec<Option<bool>> = pts
        .par_iter()
        .map(|&p| {
            let (hit, tr) = reaches_p_star(x, p, &p_star, opts.tau_hit, opts.transit_t_max).ok()?;
            // on the sphere, orbits ending at a pole are outside the chaotic part
            if x.model() == ManifoldModel::Sphere && tr.terminal_event().kind == EventKind::HitPole {
                return None;
            }
            Some(hit)
        })
        .collect();
    let counted: Vec<bool> = transit.into_iter().flatten().collect();
    let fraction = if counted.is_empty() {
        0.0
    } else {
        counted.iter().filter(|&&h| h).count() as f64 / counted.len() as f64
    };

    let centers: Vec<[f64; 2]> = R2::new(opts.seed.wrapping_add(1)).take(2 * opts.witness_pairs).collect();
    let pairs: Vec<(QuotientPoint, QuotientPoint)> = centers
        .chunks(2)
        .map(|c| (off_sigma(x, c[0]), off_sigma(x, c[1])))
        .collect();
    let mut witnesses: Vec<Witness> = Vec::new();
    let mut tried = 0;
    for chunk in pairs.chunks(32) {
        if witnesses.len() >= opts.witness_target {
            break;
        }
        tried += chunk.len();
        witnesses.extend(
            chunk
                .par_iter()
                .filter_map(|&(u, v)| find_witness(x, u, v, opts))
                .collect::<Vec<_>>(),
        );
    }

    let r = manifold_diameter(x.model()) / 2.0;
    let sens_pts: Vec<QuotientPoint> = R2::new(opts.seed.wrapping_add(2))
        .take(opts.sensitivity_points)
        .map(|p| off_sigma(x, p))
        .collect();
    let sens_opts = IntegrationOptions {
        max_step: 0.01,
        ..IntegrationOptions::default().with_t_max(opts.sensitivity_t_max)
    };
    let sens: Vec<(bool, bool)> = sens_pts
        .par_iter()
        .map(|&p| {
            let q = wrap(p.x + opts.sensitivity_eps * 0.6, p.y + opts.sensitivity_eps * 0.6, x.model()).expect("finite");
            let (Ok(ta), Ok(tb)) = (
                integrate(x, p, &sens_opts, Direction::Forward),
                integrate(x, q, &sens_opts, Direction::Forward),
            ) else {
                return (false, false);
            };
            let a: Vec<QuotientPoint> = ta.samples().map(|s| s.p).collect();
            let b: Vec<QuotientPoint> = tb.samples().map(|s| s.p).collect();
            let sup = sup_pair_distance(&a, &b, r);
            let mut pointwise: f64 = 0.0;
            let mut t = 0.0;
            while t <= opts.sensitivity_t_max.min(ta.t_end()).min(tb.t_end()) {
                if let (Some(pa), Some(pb)) = (ta.point_at(t), tb.point_at(t)) {
                    pointwise = pointwise.max(quotient_distance(&pa, &pb).unwrap_or(0.0));
                }
                t += 0.01;
            }
            (sup > r, pointwise > r)
        })
        .collect();

    Ok(ChaosDiagnostics {
        p_star,
        q_star,
        displacement_sign: sign,
        transit_tested: counted.len(),
        through_p_star_fraction: fraction,
        witness_pairs_tried: tried,
        transitivity_witnesses: witnesses,
        sensitivity: Sensitivity {
            r,
            eps: opts.sensitivity_eps,
            tested: sens.len(),
            passed: sens.iter().filter(|s| s.0).count(),
            pointwise_passed: sens.iter().filter(|s| s.1).count(),
        },
    })
}

/// Re-integrate a witness and report whether it still lands in its ball.
pub fn replay_witness(x: &PiecewiseField, w: &Witness, radius: f64) -> Result<bool> {
    let landing = replay(x, w.start, w.t0)?;
    Ok(near(&landing, &w.v_center, radius))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicBand {
    /// Invisible tangency of `X⁻` on the bottom border.
    pub eta: f64,
    /// Heights above `η` foliated by loops through `p_S`.
    pub s_lo: f64,
    pub s_hi: f64,
    /// Distance from the band's upper edge to the nearest fold-orbit arc.
    pub boundary_error: f64,
    pub samples: usize,
    /// Samples whose forward and backward trajectories both end at `p_S`.
    pub homoclinic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereDecompositionReport {
    pub m_h_bands: Vec<HomoclinicBand>,
    pub p_star: Option<QuotientPoint>,
    pub samples: usize,
    pub m_h_sample_fraction: f64,
    pub m_c_sample_fraction: f64,
    pub m_s_sample_fraction: f64,
    /// Points just above the bottom border whose orbits reach `p*`.
    pub border_points_tested: usize,
    pub border_points_to_p_star: usize,
    pub boundary_orbits: Vec<Trajectory>,
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereOptions {
    pub band_samples: usize,
    pub t_max: f64,
    pub tau_hit: f64,
    pub seed: u64,
}

impl Default for SphereOptions {
    fn default() -> Self {
        SphereOptions {
            band_samples: 50,
            t_max: 100.0,
            tau_hit: 1e-4,
            seed: 0,
        }
    }
}

/// Pure `X⁻` orbit from `(x0, y0)` in one time direction: `Some(true)` if it
/// reaches the bottom border before the equator, `Some(false)` for the
/// equator, `None` otherwise.
fn lower_orbit_to_pole(x: &PiecewiseField, x0: f64, y0: f64, sgn: f64, t_max: f64) -> Option<bool> {
    let f = x.minus();
    let rhs = |s: &[f64; 2]| {
        let v = f.eval(s[0], s[1]);
        [sgn * v[0], sgn * v[1]]
    };
    let opts = SmoothOpts {
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        max_step: 0.02,
        t_max,
        event_tol: 1e-13,
    };
    match flow_smooth(&rhs, [x0, y0], &opts, &|s: &[f64; 2]| [s[1], 0.5 - s[1]], &mut |_, _| {}) {
        SmoothStop::Event { which: 0, .. } => Some(true),
        SmoothStop::Event { .. } => Some(false),
        _ => None,
    }
}

/// Height at which the `X⁻` orbit tangent to the bottom border at `v` passes
/// over the abscissae `η + k` nearest to `v` on either side.
fn tangent_orbit_heights(x: &PiecewiseField, v: f64, eta: f64) -> Vec<f64> {
    let f = x.minus();
    let right = eta + (v - eta).floor() + 1.0;
    let left = right - 1.0;
    let opts = SmoothOpts {
        rel_tol: 1e-13,
        abs_tol: 1e-15,
        max_step: 0.01,
        t_max: 20.0,
        event_tol: 1e-14,
    };
    let mut out = Vec::new();
    for sgn in [1.0, -1.0] {
        let rhs = |s: &[f64; 2]| {
            let w = f.eval(s[0], s[1]);
            [sgn * w[0], sgn * w[1]]
        };
        if let SmoothStop::Event { y, .. } =
            flow_smooth(&rhs, [v, 0.0], &opts, &|s: &[f64; 2]| [right - s[0], s[0] - left], &mut |_, _| {})
        {
            out.push(y[1]);
        }
    }
    out
}

/// Homoclinic bands through the invisible bottom-border tangencies, and the
/// sampled split of the rest into orbits through `p*` and a residue.
pub fn sphere_decomposition(x: &PiecewiseField, samples: usize, opts: &SphereOptions) -> Result<SphereDecompositionReport> {
    if x.model() != ManifoldModel::Sphere {
        return Err(Error::ModelMismatch(x.model(), ManifoldModel::Sphere));
    }
    let f = x.minus();
    let g = |t: f64| f.eval(t, 0.0)[1];
    let scan = scan_circle(&g, crate::field::N_GRID, crate::field::TAU_ROOT);
    let mut invisible = Vec::new();
    let mut visible = Vec::new();
    for r in &scan.roots {
        let l2 = lie_at(f, r.x, 0.0, 2);
        if l2 < -TAU_SIGN {
            invisible.push(r.x);
        } else if l2 > TAU_SIGN {
            visible.push(r.x);
        }
    }
    let p_star = find_p_star(x).ok().map(|p| p.p_star);
    let io = IntegrationOptions::default().with_t_max(opts.t_max);
    let mut bands = Vec::new();
    let mut boundary_orbits = Vec::new();
    for &eta in &invisible {
        let homo = |s: f64| {
            lower_orbit_to_pole(x, eta, s, 1.0, opts.t_max) == Some(true)
                && lower_orbit_to_pole(x, eta, s, -1.0, opts.t_max) == Some(true)
        };
        let grid = 400;
        let mut s_hi = None;
        for k in 1..grid {
            let s = 0.5 * k as f64 / grid as f64;
            if !homo(s) {
                if k > 1 {
                    s_hi = Some((0.5 * (k - 1) as f64 / grid as f64, s));
                }
                break;
            }
        }
        let Some((mut a, mut b)) = s_hi else { continue };
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if homo(m) {
                a = m;
            } else {
                b = m;
            }
        }
        let s_hi = a;
        let boundary_error = visible
            .iter()
            .flat_map(|&v| tangent_orbit_heights(x, v, eta))
            .map(|h| (h - s_hi).abs())
            .fold(f64::INFINITY, f64::min);
        let s_lo = 1e-6;
        let pts: Vec<[f64; 2]> = R2::new(opts.seed).take(opts.band_samples).collect();
        let homoclinic = pts
            .par_iter()
            .filter(|p| {
                let s = s_lo + (0.02 + 0.96 * p[0]) * (s_hi - s_lo);
                let Ok(q) = wrap(eta, s, ManifoldModel::Sphere) else { return false };
                [Direction::Forward, Direction::Backward].iter().all(|&d| {
                    integrate(x, q, &IntegrationOptions { record_samples: false, ..io }, d)
                        .map(|t| {
                            let e = t.terminal_event();
                            e.kind == EventKind::HitPole && e.detail == "south"
                        })
                        .unwrap_or(false)
                })
            })
            .count();
        if let Ok(q) = wrap(eta, s_hi, ManifoldModel::Sphere) {
            if let Ok(t) = integrate(x, q, &IntegrationOptions::default().with_t_max(5.0), Direction::Forward) {
                boundary_orbits.push(t);
            }
        }
        bands.push(HomoclinicBand {
            eta,
            s_lo,
            s_hi,
            boundary_error,
            samples: pts.len(),
            homoclinic,
        });
    }

    let pts: Vec<QuotientPoint> = R2::new(opts.seed.wrapping_add(1)).take(samples).map(|p| off_sigma(x, p)).collect();
    let kinds: Vec<u8> = pts
        .par_iter()
        .map(|&p| {
            let quiet = IntegrationOptions { record_samples: false, ..io };
            let fwd = integrate(x, p, &quiet, Direction::Forward).ok();
            let bwd = integrate(x, p, &quiet, Direction::Backward).ok();
            let at_south = |t: &Option<Trajectory>| {
                t.as_ref().is_some_and(|t| {
                    let e = t.terminal_event();
                    e.kind == EventKind::HitPole && e.detail == "south"
                })
            };
            if at_south(&fwd) && at_south(&bwd) {
                return 0;
            }
            if let Some(ps) = &p_star {
                if reaches_p_star(x, p, ps, opts.tau_hit, opts.t_max).map(|r| r.0).unwrap_or(false) {
                    return 1;
                }
            }
            2
        })
        .collect();
    let n = kinds.len().max(1) as f64;
    let frac = |k: u8| kinds.iter().filter(|&&c| c == k).count() as f64 / n;

    let mut border_tested = 0;
    let mut border_hits = 0;
    if let Some(ps) = &p_star {
        let border: Vec<QuotientPoint> = (0..64)
            .map(|k| wrap((k as f64 + 0.5) / 64.0, 1e-3, ManifoldModel::Sphere).expect("finite"))
            .collect();
        border_tested = border.len();
        border_hits = border
            .par_iter()
            .filter(|&&p| reaches_p_star(x, p, ps, opts.tau_hit, opts.t_max).map(|r| r.0).unwrap_or(false))
            .count();
    }
    let annotation = if invisible.is_empty() {
        Some("no invisible tangency on the bottom border; no homoclinic band".to_string())
    } else {
        None
    };
    Ok(SphereDecompositionReport {
        m_h_bands: bands,
        p_star,
        samples: kinds.len(),
        m_h_sample_fraction: frac(0),
        m_c_sample_fraction: frac(1),
        m_s_sample_fraction: frac(2),
        border_points_tested: border_tested,
        border_points_to_p_star: border_hits,
        boundary_orbits,
        annotation,
    })
}

/// Visible/invisible label of `X⁻` tangencies on the bottom border of the sphere.
pub fn bottom_border_tangencies(x: &PiecewiseField) -> Vec<(f64, Visibility)> {
    let f = x.minus();
    let g = |t: f64| f.eval(t, 0.0)[1];
    scan_circle(&g, crate::field::N_GRID, crate::field::TAU_ROOT)
        .roots
        .iter()
        .map(|r| {
            let l2 = lie_at(f, r.x, 0.0, 2);
            let vis = if l2 > TAU_SIGN {
                Visibility::Visible
            } else if l2 < -TAU_SIGN {
                Visibility::Invisible
            } else {
                Visibility::Degenerate
            };
            (r.x, vis)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn discrepancy_examples() {
        let s = equidistribution_stat(&[0.25, 0.75], 2).unwrap();
        assert_abs_diff_eq!(s.discrepancy, 0.25, epsilon = 1e-15);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let pts: Vec<f64> = (0..1000).map(|k| (k as f64 * g).fract()).collect();
        assert!(equidistribution_stat(&pts, 1000).unwrap().discrepancy < 0.01);
        let flat = vec![0.3; 100];
        let s = equidistribution_stat(&flat, 100).unwrap();
        assert_abs_diff_eq!(s.discrepancy, 0.7, epsilon = 1e-12);
        assert_eq!(s.min_return_gap, 0.0);
        assert!(equidistribution_stat(&[0.1], 1).is_err());
    }

    #[test]
    fn discrepancy_matches_brute_force() {
        // sup over anchored boxes [0, t), evaluated just below and at each point
        let pts: Vec<f64> = (0..37).map(|k| (k as f64 * 0.381_966).fract()).collect();
        let n = pts.len() as f64;
        let mut brute: f64 = 0.0;
        for &p in &pts {
            for t in [p, p + 1e-12] {
                let count = pts.iter().filter(|&&q| q < t).count() as f64;
                brute = brute.max((count / n - t).abs());
            }
        }
        let s = equidistribution_stat(&pts, pts.len()).unwrap();
        assert_abs_diff_eq!(s.discrepancy, brute, epsilon = 1e-9);
    }

    fn q(s: &str) -> ExactReal {
        s.parse().unwrap()
    }

    #[test]
    fn regular_torus_verdicts() {
        let o = RegularOptions::default();
        let r = classify_regular(&q("1"), &q("1"), &q("1"), &q("1"), ManifoldModel::Torus, &o).unwrap();
        assert!(matches!(r.verdict, Verdict::PeriodicFoliation { n0: 2, .. }), "{r:?}");
        assert!(r.evidence.iter().all(|e| e.passed), "{r:?}");
        let r = classify_regular(&q("2"), &q("0"), &q("-1"), &q("1"), ManifoldModel::Torus, &o).unwrap();
        match r.verdict {
            Verdict::SlidingAttractor { sigma, speed, .. } => {
                assert_eq!(sigma, SigmaId::Sigma2);
                assert_abs_diff_eq!(speed, 1.0, epsilon = 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert!(r.evidence.iter().all(|e| e.passed), "{:?}", r.evidence);
        assert!(classify_regular(&q("1"), &q("1"), &q("2"), &q("1"), ManifoldModel::Torus, &o).is_err());
    }

    #[test]
    fn sphere_north_south() {
        let r = classify_regular(&q("1"), &q("1/2"), &q("1"), &q("1"), ManifoldModel::Sphere, &RegularOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::NorthSouth);
        assert!(r.evidence[0].passed);
    }

    #[test]
    fn orbit_graph_of_drift() {
        let x = PiecewiseField::new(
            crate::field::TrigField::constant(2.0, -1.0),
            crate::field::TrigField::constant(1.0, 0.1),
            ManifoldModel::Torus,
        );
        let g = OrbitGraph::through_lambda(&x, 0.2, 100).unwrap();
        assert_abs_diff_eq!(g.y_at(0.37), 0.237, epsilon = 1e-12);
    }
}
