//! Return maps: the closed-form crossing return, exact periodicity, the
//! half-return map on `Λ = {x = 0, 0 ≤ y ≤ 1/2}`, displacement roots and the
//! distinguished fold `p*`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{lcm, ExactReal};
use crate::field::{
    decompose_sigma, sliding_rest_points, DetectOptions, PiecewiseField, RegionLabel, SigmaId,
    SigmaInterval, Side, Visibility,
};
use crate::flow::{integrate_until, Direction, EventKind, EventRecord, IntegrationOptions};
use crate::manifold::{unit_mod, ManifoldModel, QuotientPoint};
use crate::ode::{dopri_step, error_norm, flow_smooth, step_factor, SmoothOpts, SmoothStop};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Section {
    Sigma1,
    Sigma2,
    Lambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub section: Section,
    /// `x` on a switching circle, `ξ` on `Λ`.
    pub coord: f64,
}

impl SectionPoint {
    pub fn lambda(xi: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&xi) {
            return Err(Error::domain(format!("ξ = {xi} outside [0, 1/2]")));
        }
        Ok(SectionPoint {
            section: Section::Lambda,
            coord: xi,
        })
    }

    pub fn sigma1(x: f64) -> Self {
        SectionPoint {
            section: Section::Sigma1,
            coord: unit_mod(x),
        }
    }

    pub fn to_point(&self, model: ManifoldModel) -> QuotientPoint {
        let (x, y) = match self.section {
            Section::Sigma1 => (self.coord, 0.0),
            Section::Sigma2 => (self.coord, 0.5),
            Section::Lambda => (0.0, self.coord),
        };
        crate::manifold::wrap(x, y, model).expect("section coordinates are finite")
    }
}

/// Constant normal form `X⁺ = (a, σ₁)`, `X⁻ = (b, σ₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalForm {
    pub a: f64,
    pub b: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

/// Point reached after `n` half-turns from `(x, 0)`, by the closed form
/// `x + (n/2)(a/(2σ₁) + b/(2σ₂))` at height `n/2`.
///
/// For `σ < 0` the orbit moves downward, so the closed form describes the
/// point reached in backward time.
pub fn first_return_crossing(nf: &NormalForm, p: &SectionPoint, n: i64) -> Result<SectionPoint> {
    if nf.sigma1 * nf.sigma2 <= 0.0 {
        return Err(Error::domain("first_return_crossing needs σ₁σ₂ > 0"));
    }
    if p.section != Section::Sigma1 {
        return Err(Error::domain("start point must lie on Σ₁"));
    }
    let half = n as f64 / 2.0;
    let x = p.coord + half * (nf.a / (2.0 * nf.sigma1) + nf.b / (2.0 * nf.sigma2));
    Ok(SectionPoint {
        section: if n % 2 == 0 { Section::Sigma1 } else { Section::Sigma2 },
        coord: unit_mod(x),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Periodicity {
    /// Every orbit closes after `n0` half-turns.
    Periodic { n0: u64, shift_per_turn: String },
    Dense { shift_per_turn: String },
}

/// Exact periodicity decision for the crossing normal form.
pub fn periodicity_test(a: &ExactReal, b: &ExactReal, s1: &ExactReal, s2: &ExactReal) -> Result<Periodicity> {
    let (f1, f2) = (s1.to_f64(), s2.to_f64());
    if s1.is_zero() || s2.is_zero() || f1 * f2 <= 0.0 {
        return Err(Error::domain("periodicity_test needs σ₁σ₂ > 0"));
    }
    // x-shift per full turn is w/2 with w = a/σ₁ + b/σ₂
    let w = a.div(s1)?.add(&b.div(s2)?);
    let per_turn = w.scale(crate::exact::Q::new(1, 2));
    match w.as_rational() {
        Some(q) => {
            let p = q.numer().abs();
            let d = *q.denom();
            let n0 = if p == 0 {
                2
            } else {
                let four_d = 4 * d;
                let g = num_integer::Integer::gcd(&p, &four_d);
                lcm(four_d / g, 2)
            };
            Ok(Periodicity::Periodic {
                n0: n0 as u64,
                shift_per_turn: per_turn.to_string(),
            })
        }
        None => Ok(Periodicity::Dense {
            shift_per_turn: per_turn.to_string(),
        }),
    }
}

/// Refuses: rationality cannot be decided from floats.
pub fn periodicity_test_f64(a: f64, _b: f64, _s1: f64, _s2: f64) -> Result<Periodicity> {
    ExactReal::from_f64(a).map(|_| unreachable!())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSample {
    pub q: SectionPoint,
    pub pi_q: SectionPoint,
    pub d: f64,
    pub return_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CycleStability {
    AttractingCycle,
    RepellingCycle,
    NonHyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapRoot {
    pub q: SectionPoint,
    pub d: f64,
    pub d_prime: f64,
    pub stability: CycleStability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapOptions {
    pub n_grid: usize,
    pub tau_root: f64,
    pub h_fd: f64,
    pub band_min: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub t_max: f64,
    pub event_tol: f64,
    pub pole_tol: f64,
    /// Section to scan; `None` picks `Λ` when the half-return covers part of
    /// it and `Σ₁` otherwise.
    pub section: Option<Section>,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            n_grid: 512,
            tau_root: 1e-9,
            h_fd: 1e-6,
            band_min: 8,
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_step: 0.05,
            t_max: 50.0,
            event_tol: 1e-13,
            pole_tol: 1e-9,
            section: None,
        }
    }
}

impl MapOptions {
    fn smooth(&self) -> SmoothOpts {
        SmoothOpts {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            t_max: self.t_max,
            event_tol: self.event_tol,
        }
    }

    pub fn integration(&self) -> IntegrationOptions {
        IntegrationOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            t_max: self.t_max,
            event_tol: self.event_tol,
            pole_tol: self.pole_tol,
            record_samples: false,
            ..Default::default()
        }
    }
}

/// First return of the `X⁻` flow from `(0, ξ)` to `Λ`.
pub fn half_return(x: &PiecewiseField, q: &SectionPoint, opts: &MapOptions) -> Result<DisplacementSample> {
    if q.section != Section::Lambda {
        return Err(Error::domain("half_return starts on Λ"));
    }
    let xi = q.coord;
    let model = x.model();
    let f = x.minus();
    let rhs = |s: &[f64; 2]| f.eval(s[0], s[1]);
    let pole_tol = opts.pole_tol;
    // a turn back to x = 0 arms once the orbit has left Λ
    let dir = if f.eval(0.0, xi)[0] >= 0.0 { 1.0 } else { -1.0 };
    let events = |s: &[f64; 2]| -> [f64; 5] {
        let bottom = match model {
            ManifoldModel::Torus => s[1],
            ManifoldModel::Sphere => s[1] - pole_tol,
        };
        [1.0 - s[0], 1.0 + s[0], dir * s[0], 0.5 - s[1], bottom]
    };
    let exit = |kind: EventKind, x0: f64, y0: f64, t: f64, detail: &str| Error::NoReturn {
        exit: Box::new(EventRecord {
            kind,
            location: crate::manifold::wrap(x0, y0, model).unwrap_or(QuotientPoint { x: 0.0, y: 0.0, model }),
            t,
            detail: detail.into(),
        }),
    };
    match flow_smooth(&rhs, [0.0, xi], &opts.smooth(), &events, &mut |_, _| {}) {
        SmoothStop::Event { which, t, y } => match which {
            0..=2 => {
                let eta = y[1];
                Ok(DisplacementSample {
                    q: *q,
                    pi_q: SectionPoint {
                        section: Section::Lambda,
                        coord: eta,
                    },
                    d: eta - xi,
                    return_time: t,
                })
            }
            3 => Err(exit(EventKind::HitSigma, y[0], 0.5, t, "sigma2")),
            _ => match model {
                ManifoldModel::Torus => Err(exit(EventKind::HitSigma, y[0], 0.0, t, "sigma1")),
                ManifoldModel::Sphere => Err(exit(EventKind::HitPole, 0.0, 0.0, t, "south")),
            },
        },
        SmoothStop::TimeLimit { t, y } => Err(exit(EventKind::TimeLimit, y[0], y[1], t, "")),
        SmoothStop::Failure { t, y } => Err(exit(EventKind::StepFailure, y[0], y[1], t, "")),
    }
}

/// First return of the full Filippov flow from `(x, 0)` to `Σ₁`, with the
/// lifted displacement `x' - x` (winding included).
pub fn sigma1_return(x: &PiecewiseField, q: &SectionPoint, opts: &MapOptions) -> Result<DisplacementSample> {
    if x.model() != ManifoldModel::Torus {
        return Err(Error::domain("Σ₁ exists only on the torus"));
    }
    if q.section != Section::Sigma1 {
        return Err(Error::domain("sigma1_return starts on Σ₁"));
    }
    let p0 = q.to_point(ManifoldModel::Torus);
    let mut winds = 0i64;
    let mut stop = |e: &EventRecord| -> bool {
        match e.kind {
            EventKind::WrapX => {
                winds += if e.detail == "+1" { 1 } else { -1 };
                false
            }
            EventKind::CrossSigma => e.detail == "sigma1",
            _ => false,
        }
    };
    let tr = integrate_until(x, p0, &opts.integration(), Direction::Forward, &mut stop)?;
    let last = tr.terminal_event().clone();
    if last.kind != EventKind::CrossSigma {
        return Err(Error::NoReturn { exit: Box::new(last) });
    }
    let lifted = last.location.x + winds as f64;
    Ok(DisplacementSample {
        q: *q,
        pi_q: SectionPoint::sigma1(last.location.x),
        d: lifted - q.coord,
        return_time: last.t,
    })
}

fn displacement(x: &PiecewiseField, section: Section, c: f64, opts: &MapOptions) -> Result<DisplacementSample> {
    match section {
        Section::Lambda => half_return(x, &SectionPoint::lambda(c)?, opts),
        Section::Sigma1 => sigma1_return(x, &SectionPoint::sigma1(c), opts),
        Section::Sigma2 => Err(Error::domain("displacement on Σ₂ is not provided")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementScan {
    pub section: Section,
    /// `(coord, d)` on the grid; `None` where there is no return.
    pub grid: Vec<(f64, Option<f64>)>,
    pub roots: Vec<MapRoot>,
    /// Sub-intervals on which `d` vanishes identically.
    pub center_bands: Vec<(f64, f64)>,
    /// Maximal covered sub-intervals of the grid.
    pub coverage: Vec<(f64, f64)>,
}

impl DisplacementScan {
    /// `Some(sign)` if every covered grid value has that strict sign.
    pub fn constant_sign(&self) -> Option<i8> {
        let vals: Vec<f64> = self.grid.iter().filter_map(|g| g.1).collect();
        if vals.is_empty() {
            return None;
        }
        if vals.iter().all(|&d| d > 0.0) {
            Some(1)
        } else if vals.iter().all(|&d| d < 0.0) {
            Some(-1)
        } else {
            None
        }
    }
}

fn section_range(x: &PiecewiseField, section: Section, opts: &MapOptions) -> (f64, f64) {
    match section {
        Section::Lambda => {
            let lo = if x.model() == ManifoldModel::Sphere { opts.pole_tol } else { 0.0 };
            (lo, 0.5)
        }
        _ => (0.0, 1.0),
    }
}

/// Scan the displacement on `section` and bracket its zeros.
pub fn scan_displacement(x: &PiecewiseField, section: Section, opts: &MapOptions) -> Result<DisplacementScan> {
    let (lo, hi) = section_range(x, section, opts);
    let n = opts.n_grid.max(4);
    // cell centres keep the scan off the section's endpoints
    let coords: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect();
    let values: Vec<Option<f64>> = coords
        .par_iter()
        .map(|&c| displacement(x, section, c, opts).ok().map(|s| s.d))
        .collect();
    let grid: Vec<(f64, Option<f64>)> = coords.iter().copied().zip(values.iter().copied()).collect();

    let mut coverage = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    for &(c, v) in &grid {
        match (v, run.as_mut()) {
            (Some(_), Some(r)) => r.1 = c,
            (Some(_), None) => run = Some((c, c)),
            (None, Some(_)) => coverage.push(run.take().expect("run")),
            (None, None) => {}
        }
    }
    if let Some(r) = run {
        coverage.push(r);
    }

    // flat bands
    let mut center_bands = Vec::new();
    let mut in_band = vec![false; n];
    let mut i = 0;
    while i < n {
        if grid[i].1.is_some_and(|d| d.abs() < opts.tau_root) {
            let mut j = i;
            while j < n && grid[j].1.is_some_and(|d| d.abs() < opts.tau_root) {
                j += 1;
            }
            if j - i >= opts.band_min {
                for k in in_band.iter_mut().take(j).skip(i) {
                    *k = true;
                }
                center_bands.push((grid[i].0, grid[j - 1].0));
            }
            i = j;
        } else {
            i += 1;
        }
    }

    let dfun = |c: f64| displacement(x, section, c, opts).map(|s| s.d);
    let circle = section != Section::Lambda;
    let mut brackets = Vec::new();
    let pairs = if circle { n } else { n - 1 };
    for i in 0..pairs {
        let j = (i + 1) % n;
        if in_band[i] || in_band[j] {
            continue;
        }
        let (Some(di), Some(dj)) = (grid[i].1, grid[j].1) else { continue };
        let (a, mut b) = (grid[i].0, grid[j].0);
        if j == 0 {
            b += 1.0;
        }
        if di == 0.0 {
            brackets.push((a, a));
        } else if dj != 0.0 && (di > 0.0) != (dj > 0.0) {
            brackets.push((a, b));
        }
    }
    let roots: Vec<MapRoot> = brackets
        .par_iter()
        .filter_map(|&(a, b)| refine_root(&dfun, a, b, section, opts))
        .collect();
    let mut roots = roots;
    roots.sort_by(|r, s| r.q.coord.total_cmp(&s.q.coord));
    Ok(DisplacementScan {
        section,
        grid,
        roots,
        center_bands,
        coverage,
    })
}

fn refine_root(
    dfun: &(dyn Fn(f64) -> Result<f64> + Sync),
    mut a: f64,
    mut b: f64,
    section: Section,
    opts: &MapOptions,
) -> Option<MapRoot> {
    if a != b {
        let mut da = dfun(a).ok()?;
        for _ in 0..200 {
            if b - a <= 1e-13 {
                break;
            }
            let m = 0.5 * (a + b);
            let dm = dfun(m).ok()?;
            if dm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if (dm > 0.0) == (da > 0.0) {
                a = m;
                da = dm;
            } else {
                b = m;
            }
        }
    }
    let c = 0.5 * (a + b);
    let d = dfun(c).ok()?;
    let h = opts.h_fd;
    let d_prime = (dfun(c + h).ok()? - dfun(c - h).ok()?) / (2.0 * h);
    let stability = if d_prime < -1e-6 {
        CycleStability::AttractingCycle
    } else if d_prime > 1e-6 {
        CycleStability::RepellingCycle
    } else {
        CycleStability::NonHyperbolic
    };
    let coord = if section == Section::Lambda { c } else { unit_mod(c) };
    Some(MapRoot {
        q: SectionPoint { section, coord },
        d,
        d_prime,
        stability,
    })
}

/// Zeros of the displacement map with stability from `d′`.
pub fn displacement_roots(x: &PiecewiseField, opts: &MapOptions) -> Result<DisplacementScan> {
    let section = match opts.section {
        Some(s) => s,
        None => {
            let lam = scan_displacement(x, Section::Lambda, opts)?;
            if !lam.coverage.is_empty() || x.model() == ManifoldModel::Sphere {
                return Ok(lam);
            }
            Section::Sigma1
        }
    };
    scan_displacement(x, section, opts)
}

/// Orbit of `X⁻` through a fold, as a graph `y(x)` over `x ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldArc {
    pub fold_x: f64,
    pub visibility: Visibility,
    /// Samples of `y` at `x = k / (len - 1)`.
    pub ys: Vec<f64>,
}

impl FoldArc {
    pub fn y_at(&self, x: f64) -> f64 {
        let m = self.ys.len() - 1;
        let s = x.clamp(0.0, 1.0) * m as f64;
        let i = (s.floor() as usize).min(m - 1);
        let th = s - i as f64;
        self.ys[i] * (1.0 - th) + self.ys[i + 1] * th
    }
}

/// Integrate `dy/dx = X₂⁻/X₁⁻` from `(x0, y0)` to each target abscissa (sorted
/// away from `x0`).
pub(crate) fn graph_through(x: &PiecewiseField, x0: f64, y0: f64, targets: &[f64], rel: f64, abs: f64) -> Result<Vec<f64>> {
    let f = x.minus();
    let rhs = |s: &[f64; 2]| {
        let v = f.eval(s[0], s[1]);
        [1.0, v[1] / v[0]]
    };
    let mut out = Vec::with_capacity(targets.len());
    let mut st = [x0, y0];
    for &xt in targets {
        let dir = if xt >= st[0] { 1.0 } else { -1.0 };
        let g = |s: &[f64; 2]| {
            let v = rhs(s);
            [dir * v[0], dir * v[1]]
        };
        let mut h = 0.01f64;
        let mut guard = 0;
        while (xt - st[0]).abs() > 1e-15 {
            guard += 1;
            if guard > 1_000_000 {
                return Err(Error::Numeric("fold arc integration stalled".into()));
            }
            let step = h.min((xt - st[0]).abs());
            if f.eval(st[0], st[1])[0] <= 0.0 {
                return Err(Error::Refused("X₁⁻ must stay positive along fold arcs".into()));
            }
            let (y1, err) = dopri_step(&g, &st, step);
            let en = error_norm(&st, &y1, &err, rel, abs);
            if en <= 1.0 {
                st = y1;
                if (xt - st[0]).abs() < 1e-14 {
                    st[0] = xt;
                }
                h = (step * step_factor(en)).min(0.05);
            } else {
                h = step * step_factor(en).min(1.0);
                if h < 1e-14 {
                    return Err(Error::Numeric("fold arc step underflow".into()));
                }
            }
        }
        out.push(st[1]);
    }
    Ok(out)
}

/// `X⁻` orbit through `(x_f, 1/2)` sampled on `m + 1` points of `[0, 1]`.
pub fn fold_arc(x: &PiecewiseField, x_f: f64, visibility: Visibility, m: usize) -> Result<FoldArc> {
    let xs: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
    let split = xs.partition_point(|&v| v <= x_f);
    let mut left: Vec<f64> = xs[..split].to_vec();
    left.reverse();
    let right = &xs[split..];
    let mut yl = graph_through(x, x_f, 0.5, &left, 1e-12, 1e-14)?;
    yl.reverse();
    let yr = graph_through(x, x_f, 0.5, right, 1e-12, 1e-14)?;
    yl.extend(yr);
    Ok(FoldArc {
        fold_x: x_f,
        visibility,
        ys: yl,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PStar {
    pub p_star: QuotientPoint,
    /// First point of `Λ` on the backward `X⁻` orbit of `p*`.
    pub q_star: SectionPoint,
    /// Stable sliding arc whose flow ends at `p*`.
    pub sliding_interval: SigmaInterval,
    pub arcs: Vec<FoldArc>,
}

/// Locate `p*`: a visible `X⁻` fold on `Σ₂` that absorbs its adjacent stable
/// sliding arc and whose fold arc lies below every other fold arc.
pub fn find_p_star(x: &PiecewiseField) -> Result<PStar> {
    let dec = decompose_sigma(x, SigmaId::Sigma2);
    let folds: Vec<_> = dec
        .tangencies
        .iter()
        .filter(|t| t.side == Side::Minus)
        .copied()
        .collect();
    if folds.is_empty() {
        return Err(Error::NotFound("X⁻ has no folds on Σ₂".into()));
    }
    let m = 1000;
    let arcs: Vec<FoldArc> = folds
        .iter()
        .map(|t| fold_arc(x, t.location.x, t.visibility, m))
        .collect::<Result<_>>()?;
    let rest = sliding_rest_points(x, SigmaId::Sigma2, &DetectOptions::default());
    let tol = 1e-9;
    let clip = |y: f64| y.min(0.5);
    let close = |a: f64, b: f64| {
        let d = (unit_mod(a) - unit_mod(b)).abs();
        d.min(1.0 - d) < 1e-9
    };
    let mut reasons = Vec::new();
    for (k, t) in folds.iter().enumerate() {
        if t.visibility != Visibility::Visible {
            continue;
        }
        let xf = t.location.x;
        // adjacent stable sliding arc with flow toward the fold
        let adjacent = dec.intervals.iter().find(|iv| {
            iv.label == RegionLabel::StableSliding && (close(iv.start, xf) || close(iv.end, xf))
        });
        let Some(iv) = adjacent else {
            reasons.push(format!("fold {xf:.6}: no adjacent stable sliding"));
            continue;
        };
        let toward_end = close(iv.end, xf);
        let samples = 64;
        let moves_in = (1..samples).all(|i| {
            let s = iv.start + iv.length() * i as f64 / samples as f64;
            let v = x.sliding_velocity(SigmaId::Sigma2, unit_mod(s));
            if toward_end {
                v > 0.0
            } else {
                v < 0.0
            }
        });
        let blocked = rest.iter().any(|&r| iv.contains(r));
        if !moves_in || blocked {
            reasons.push(format!("fold {xf:.6}: sliding flow does not converge to it"));
            continue;
        }
        let star = &arcs[k];
        let contained = arcs.iter().enumerate().all(|(j, arc)| {
            j == k || arc.ys.iter().zip(&star.ys).all(|(&y, &ys)| clip(y) >= clip(ys) - tol && y >= 0.0)
        });
        if !contained {
            reasons.push(format!("fold {xf:.6}: some fold arc leaves its region"));
            continue;
        }
        let q = star.ys[0];
        if !(0.0..=0.5).contains(&q) {
            reasons.push(format!("fold {xf:.6}: backward arc misses Λ"));
            continue;
        }
        return Ok(PStar {
            p_star: t.location,
            q_star: SectionPoint::lambda(q)?,
            sliding_interval: *iv,
            arcs,
        });
    }
    Err(Error::NotFound(format!("no fold qualifies as p*: {}", reasons.join("; "))))
}
