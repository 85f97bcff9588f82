//! Event-driven Filippov integration on the quotient square.
//!
//! A trajectory is a concatenation of free flights of `X⁺` or `X⁻` and of
//! sliding motions along a switching circle. Free flights are integrated in
//! raw coordinates of the half they live in; every boundary (switching
//! circle, pole, vertical seam) is an event function located by bisection
//! over the step fraction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    find_tangencies, label_from_normals, lie_at, sliding_rest_points, DetectOptions, PiecewiseField,
    RegionLabel, SigmaId, Side, TangencyPoint, Visibility, TAU_ON_SIGMA, TAU_SIGN,
};
use crate::manifold::{unit_mod, wrap, ManifoldModel, QuotientPoint};
use crate::ode::{dopri_step, error_norm, step_factor};
use crate::roots::bisect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// How to leave an unstable sliding point, where forward motion is not unique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchPolicy {
    /// Leave into the upper half (`X⁺`).
    DeterministicRight,
    /// Leave into the lower half (`X⁻`).
    DeterministicLeft,
    /// Follow both halves at each branch point, up to this many branch points.
    EnumerateToDepth(u8),
}

impl Default for BranchPolicy {
    fn default() -> Self {
        BranchPolicy::DeterministicRight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub t_max: f64,
    pub event_tol: f64,
    pub pole_tol: f64,
    pub max_events: usize,
    pub branch_policy: BranchPolicy,
    /// Keep every accepted step as a sample; otherwise only segment ends.
    pub record_samples: bool,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.05,
            t_max: 100.0,
            event_tol: 1e-10,
            pole_tol: 1e-9,
            max_events: 1_000_000,
            branch_policy: BranchPolicy::DeterministicRight,
            record_samples: true,
        }
    }
}

impl IntegrationOptions {
    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("t_max", self.t_max),
            ("event_tol", self.event_tol),
            ("pole_tol", self.pole_tol),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_events == 0 {
            return Err(Error::domain("max_events must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    FreePlus,
    FreeMinus,
    Sliding,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::FreePlus => "free_plus",
            Regime::FreeMinus => "free_minus",
            Regime::Sliding => "sliding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    HitSigma,
    CrossSigma,
    EnterSliding,
    ExitSlidingAtFold,
    ReachPseudoEquilibrium,
    HitPole,
    WrapX,
    WrapY,
    BranchChoice,
    TimeLimit,
    StepFailure,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            EventKind::ReachPseudoEquilibrium
                | EventKind::HitPole
                | EventKind::TimeLimit
                | EventKind::StepFailure
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub location: QuotientPoint,
    pub t: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub p: QuotientPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub regime: Regime,
    /// Switching circle carrying a sliding segment.
    pub sigma: Option<SigmaId>,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: Vec<Sample>,
    pub terminal_event: EventRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<TrajectorySegment>,
    pub events: Vec<EventRecord>,
    pub branch_policy_used: BranchPolicy,
    /// Choices taken at branch points, `U` (upper) or `D` (lower).
    pub branch_id: String,
    pub direction: Direction,
}

impl Trajectory {
    pub fn terminal_event(&self) -> &EventRecord {
        self.events.last().expect("trajectory has at least one event")
    }

    pub fn final_point(&self) -> QuotientPoint {
        self.terminal_event().location
    }

    pub fn t_end(&self) -> f64 {
        self.terminal_event().t
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.segments.iter().flat_map(|s| s.samples.iter())
    }

    /// Position at time `t` by linear interpolation of the samples.
    pub fn point_at(&self, t: f64) -> Option<QuotientPoint> {
        for seg in &self.segments {
            let (a, b) = (seg.t_start.min(seg.t_end), seg.t_start.max(seg.t_end));
            if t < a || t > b {
                continue;
            }
            for w in seg.samples.windows(2) {
                let (s0, s1) = (&w[0], &w[1]);
                let (lo, hi) = (s0.t.min(s1.t), s0.t.max(s1.t));
                if t >= lo && t <= hi {
                    let th = if s1.t == s0.t { 0.0 } else { (t - s0.t) / (s1.t - s0.t) };
                    let mut dx = s1.p.x - s0.p.x;
                    if dx > 0.5 {
                        dx -= 1.0;
                    } else if dx < -0.5 {
                        dx += 1.0;
                    }
                    let dy = s1.p.y - s0.p.y;
                    if dy.abs() > 0.5 {
                        return Some(if th < 0.5 { s0.p } else { s1.p });
                    }
                    return wrap(s0.p.x + th * dx, s0.p.y + th * dy, s0.p.model).ok();
                }
            }
            if let Some(s) = seg.samples.last() {
                if s.t == t {
                    return Some(s.p);
                }
            }
        }
        None
    }

    /// CSV with columns `t,x,y,regime,event`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,regime,event\n");
        for seg in &self.segments {
            let n = seg.samples.len();
            for (i, s) in seg.samples.iter().enumerate() {
                let ev = if i + 1 == n {
                    format!("{:?}", seg.terminal_event.kind)
                } else {
                    String::new()
                };
                let _ = writeln!(out, "{:.17e},{:.17e},{:.17e},{},{}", s.t, s.p.x, s.p.y, seg.regime.as_str(), ev);
            }
        }
        out
    }

    /// One JSON object per event.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

/// Integrate `x` from `p0`. Under [`BranchPolicy::EnumerateToDepth`] this is
/// the branch that always leaves upward; see [`integrate_branches`].
pub fn integrate(
    x: &PiecewiseField,
    p0: QuotientPoint,
    opts: &IntegrationOptions,
    direction: Direction,
) -> Result<Trajectory> {
    integrate_until(x, p0, opts, direction, &mut |_| false)
}

/// As [`integrate`], stopping right after the first event for which `stop`
/// returns true.
pub fn integrate_until(
    x: &PiecewiseField,
    p0: QuotientPoint,
    opts: &IntegrationOptions,
    direction: Direction,
    stop: &mut dyn FnMut(&EventRecord) -> bool,
) -> Result<Trajectory> {
    let prep = Prepared::new(x, opts, direction)?;
    prep.run(p0, &[], stop).map(|(t, _)| t)
}

/// All trajectories obtained by taking both exits at up to `k` branch points
/// (`k` from the policy; other policies yield a single trajectory).
pub fn integrate_branches(
    x: &PiecewiseField,
    p0: QuotientPoint,
    opts: &IntegrationOptions,
    direction: Direction,
) -> Result<Vec<Trajectory>> {
    let depth = match opts.branch_policy {
        BranchPolicy::EnumerateToDepth(k) => k as usize,
        _ => return Ok(vec![integrate(x, p0, opts, direction)?]),
    };
    let prep = Prepared::new(x, opts, direction)?;
    let mut out = Vec::new();
    let mut stack: Vec<Vec<Side>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        let (traj, branch_points) = prep.run(p0, &prefix, &mut |_| false)?;
        if branch_points > prefix.len() && prefix.len() < depth {
            let mut up = prefix.clone();
            up.push(Side::Plus);
            let mut down = prefix;
            down.push(Side::Minus);
            stack.push(down);
            stack.push(up);
        } else {
            out.push(traj);
        }
    }
    out.sort_by(|a, b| a.branch_id.cmp(&b.branch_id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    /// Raw coordinates: `x ∈ [0,1]`, `y` in the half of `side`.
    Free { side: Side, x: f64, y: f64 },
    Sliding { sigma: SigmaId, x: f64 },
}

struct Prepared<'a> {
    field: PiecewiseField,
    opts: &'a IntegrationOptions,
    time_sign: f64,
    direction: Direction,
    /// Attracting zeros of the sliding velocity, per circle.
    rest: Vec<(SigmaId, f64)>,
}

#[derive(Clone, Copy)]
enum FreeEv {
    Sigma2,
    Outer,
    WrapRight,
    WrapLeft,
}

#[derive(Clone, Copy)]
enum SlideEv {
    PosExit,
    NegExit,
    WrapRight,
    WrapLeft,
}

fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (unit_mod(a) - unit_mod(b)).abs();
    d.min(1.0 - d)
}

struct Run<'p, 'a> {
    p: &'p Prepared<'a>,
    events: Vec<EventRecord>,
    segments: Vec<TrajectorySegment>,
    seg_regime: Regime,
    seg_sigma: Option<SigmaId>,
    seg_t0: f64,
    seg_samples: Vec<Sample>,
    t: f64,
    choices: &'p [Side],
    branch_points: usize,
    branch_id: String,
}

impl<'a> Prepared<'a> {
    fn new(x: &PiecewiseField, opts: &'a IntegrationOptions, direction: Direction) -> Result<Self> {
        opts.validate()?;
        let field = match direction {
            Direction::Forward => x.clone(),
            Direction::Backward => x.reversed(),
        };
        let mut rest = Vec::new();
        let dopts = DetectOptions::default();
        for &s in field.sigmas() {
            for r in sliding_rest_points(&field, s, &dopts) {
                let h = 1e-6;
                let slope = (field.sliding_velocity(s, r + h) - field.sliding_velocity(s, r - h)) / (2.0 * h);
                if slope < 0.0 {
                    rest.push((s, r));
                }
            }
        }
        Ok(Prepared {
            field,
            opts,
            time_sign: match direction {
                Direction::Forward => 1.0,
                Direction::Backward => -1.0,
            },
            direction,
            rest,
        })
    }

    fn run(
        &self,
        p0: QuotientPoint,
        choices: &[Side],
        stop: &mut dyn FnMut(&EventRecord) -> bool,
    ) -> Result<(Trajectory, usize)> {
        if p0.model != self.field.model() {
            return Err(Error::ModelMismatch(p0.model, self.field.model()));
        }
        let p0 = wrap(p0.x, p0.y, p0.model)?;
        if p0.is_pole() {
            return Err(Error::domain("initial point is a pole"));
        }
        let mut run = Run {
            p: self,
            events: Vec::new(),
            segments: Vec::new(),
            seg_regime: Regime::FreePlus,
            seg_sigma: None,
            seg_t0: 0.0,
            seg_samples: Vec::new(),
            t: 0.0,
            choices,
            branch_points: 0,
            branch_id: String::new(),
        };
        let state = run.initial_state(p0, stop);
        if let Some(state) = state {
            run.main_loop(state, stop);
        }
        let traj = Trajectory {
            segments: run.segments,
            events: run.events,
            branch_policy_used: self.opts.branch_policy,
            branch_id: run.branch_id,
            direction: self.direction,
        };
        Ok((traj, run.branch_points))
    }
}

impl<'p, 'a> Run<'p, 'a> {
    fn field(&self) -> &PiecewiseField {
        &self.p.field
    }

    fn model(&self) -> ManifoldModel {
        self.p.field.model()
    }

    fn qp(&self, x: f64, y: f64) -> QuotientPoint {
        wrap(x, y, self.model()).unwrap_or(QuotientPoint {
            x: 0.0,
            y: 0.0,
            model: self.model(),
        })
    }

    fn state_point(&self, s: &State) -> QuotientPoint {
        match *s {
            State::Free { x, y, .. } => self.qp(x, y),
            State::Sliding { sigma, x } => self.qp(x, sigma.level(Side::Minus)),
        }
    }

    fn begin_segment(&mut self, s: &State) {
        let (regime, sigma) = match *s {
            State::Free { side: Side::Plus, .. } => (Regime::FreePlus, None),
            State::Free { side: Side::Minus, .. } => (Regime::FreeMinus, None),
            State::Sliding { sigma, .. } => (Regime::Sliding, Some(sigma)),
        };
        self.seg_regime = regime;
        self.seg_sigma = sigma;
        self.seg_t0 = self.t;
        self.seg_samples.clear();
        let p = self.state_point(s);
        self.seg_samples.push(Sample {
            t: self.p.time_sign * self.t,
            p,
        });
    }

    fn sample(&mut self, s: &State) {
        if self.p.opts.record_samples {
            let p = self.state_point(s);
            self.seg_samples.push(Sample {
                t: self.p.time_sign * self.t,
                p,
            });
        }
    }

    fn end_segment(&mut self, ev: &EventRecord) {
        let last_t = self.seg_samples.last().map(|s| s.t);
        if last_t != Some(ev.t) || self.seg_samples.len() == 1 {
            if last_t == Some(ev.t) {
                self.seg_samples.pop();
            }
            self.seg_samples.push(Sample { t: ev.t, p: ev.location });
        } else if let Some(s) = self.seg_samples.last_mut() {
            s.p = ev.location;
        }
        self.segments.push(TrajectorySegment {
            regime: self.seg_regime,
            sigma: self.seg_sigma,
            t_start: self.p.time_sign * self.seg_t0,
            t_end: ev.t,
            samples: std::mem::take(&mut self.seg_samples),
            terminal_event: ev.clone(),
        });
    }

    /// Record an event; returns true if the caller's stop predicate fired.
    fn emit(&mut self, kind: EventKind, location: QuotientPoint, detail: impl Into<String>, stop: &mut dyn FnMut(&EventRecord) -> bool) -> bool {
        let ev = EventRecord {
            kind,
            location,
            t: self.p.time_sign * self.t,
            detail: detail.into(),
        };
        let halt = stop(&ev);
        self.events.push(ev);
        halt
    }

    /// Close the current segment with the last event and stop.
    fn finish(&mut self) {
        let ev = self.events.last().cloned().expect("event present");
        self.end_segment(&ev);
    }

    fn terminate(&mut self, kind: EventKind, location: QuotientPoint, detail: impl Into<String>, stop: &mut dyn FnMut(&EventRecord) -> bool) {
        self.emit(kind, location, detail, stop);
        self.finish();
    }

    fn next_choice(&mut self) -> Side {
        let i = self.branch_points;
        self.branch_points += 1;
        let side = if let Some(&c) = self.choices.get(i) {
            c
        } else {
            match self.p.opts.branch_policy {
                BranchPolicy::DeterministicLeft => Side::Minus,
                _ => Side::Plus,
            }
        };
        self.branch_id.push(if side == Side::Plus { 'U' } else { 'D' });
        side
    }

    fn sigma_of(&self, p: &QuotientPoint) -> Option<SigmaId> {
        self.field()
            .sigmas()
            .iter()
            .copied()
            .find(|s| s.contains(p))
    }

    fn initial_state(&mut self, p0: QuotientPoint, stop: &mut dyn FnMut(&EventRecord) -> bool) -> Option<State> {
        let Some(sigma) = self.sigma_of(&p0) else {
            let side = if p0.y >= 0.5 { Side::Plus } else { Side::Minus };
            let s = State::Free { side, x: p0.x, y: p0.y };
            self.begin_segment(&s);
            return Some(s);
        };
        let (pos, neg) = self.field().normals(sigma, p0.x);
        let ps = sigma.positive_side();
        let free_on = |side: Side| State::Free {
            side,
            x: p0.x,
            y: sigma.level(side),
        };
        let state = match label_from_normals(pos, neg, TAU_SIGN) {
            RegionLabel::Crossing => free_on(if pos > 0.0 { ps } else { ps.other() }),
            RegionLabel::StableSliding => State::Sliding { sigma, x: p0.x },
            RegionLabel::UnstableSliding => {
                let side = self.next_choice();
                let s = free_on(side);
                self.begin_segment(&s);
                let detail = format!("unstable sliding start, leaving {}", if side == Side::Plus { "up" } else { "down" });
                if self.emit(EventKind::BranchChoice, p0, detail, stop) {
                    self.finish();
                    return None;
                }
                return Some(s);
            }
            RegionLabel::Tangential => {
                // which normal vanishes, and where does the other one point
                let (tan_side, other_n) = if pos.abs() < TAU_SIGN { (ps, neg) } else { (ps.other(), pos) };
                let other = tan_side.other();
                let o_other = sigma.orientation(other);
                if pos.abs() < TAU_SIGN && neg.abs() < TAU_SIGN {
                    let side = self.next_choice();
                    let s = free_on(side);
                    self.begin_segment(&s);
                    if self.emit(EventKind::BranchChoice, p0, "two-fold start", stop) {
                        self.finish();
                        return None;
                    }
                    return Some(s);
                }
                if o_other * other_n > 0.0 {
                    free_on(other)
                } else {
                    let s = free_on(tan_side);
                    self.begin_segment(&s);
                    if self.emit(EventKind::BranchChoice, p0, "fold start, following tangent field", stop) {
                        self.finish();
                        return None;
                    }
                    return Some(s);
                }
            }
        };
        self.begin_segment(&state);
        Some(state)
    }

    fn main_loop(&mut self, mut state: State, stop: &mut dyn FnMut(&EventRecord) -> bool) {
        let mut h = self.p.opts.max_step.min(0.01);
        loop {
            if self.events.len() >= self.p.opts.max_events {
                let p = self.state_point(&state);
                self.terminate(EventKind::StepFailure, p, "event budget exhausted", stop);
                return;
            }
            let next = match state {
                State::Free { side, x, y } => self.free_leg(side, x, y, &mut h, stop),
                State::Sliding { sigma, x } => self.slide_leg(sigma, x, &mut h, stop),
            };
            match next {
                Some(s) => state = s,
                None => return,
            }
        }
    }

    /// Adaptive stepping in one free regime until an event changes state.
    /// Returns the next state, or `None` once terminated.
    fn free_leg(
        &mut self,
        side: Side,
        mut x: f64,
        mut y: f64,
        h: &mut f64,
        stop: &mut dyn FnMut(&EventRecord) -> bool,
    ) -> Option<State> {
        let opts = *self.p.opts;
        let model = self.model();
        let fld = self.field().clone();
        let f = fld.field(side);
        let rhs = |s: &[f64; 2]| f.eval(s[0], s[1]);
        let tol_on = TAU_ON_SIGMA;
        // outer boundary: Σ₁ on the torus, a pole on the sphere
        let outer = |s: &[f64; 2]| -> f64 {
            match (side, model) {
                (Side::Plus, ManifoldModel::Torus) => 1.0 - s[1],
                (Side::Plus, ManifoldModel::Sphere) => (1.0 - opts.pole_tol) - s[1],
                (Side::Minus, ManifoldModel::Torus) => s[1],
                (Side::Minus, ManifoldModel::Sphere) => s[1] - opts.pole_tol,
            }
        };
        let inner = |s: &[f64; 2]| -> f64 {
            match side {
                Side::Plus => s[1] - 0.5,
                Side::Minus => 0.5 - s[1],
            }
        };
        let gfun = |k: FreeEv, s: &[f64; 2]| -> f64 {
            match k {
                FreeEv::Sigma2 => inner(s),
                FreeEv::Outer => outer(s),
                FreeEv::WrapRight => 1.0 - s[0],
                FreeEv::WrapLeft => s[0],
            }
        };
        let kinds = [FreeEv::Sigma2, FreeEv::Outer, FreeEv::WrapRight, FreeEv::WrapLeft];
        if x == 0.0 && rhs(&[x, y])[0] < 0.0 {
            x = 1.0;
        }
        let mut armed = [false; 4];
        for (i, &k) in kinds.iter().enumerate() {
            let g = gfun(k, &[x, y]);
            armed[i] = match k {
                FreeEv::Sigma2 | FreeEv::Outer => g > tol_on,
                _ => true,
            };
        }
        loop {
            let remaining = opts.t_max - self.t;
            if remaining <= 0.0 {
                let p = self.qp(x, y);
                self.terminate(EventKind::TimeLimit, p, "", stop);
                return None;
            }
            let step = h.min(opts.max_step).min(remaining);
            let y0 = [x, y];
            let (y1, err) = dopri_step(&rhs, &y0, step);
            let en = error_norm(&y0, &y1, &err, opts.rel_tol, opts.abs_tol);
            if !(en <= 1.0) {
                *h = step * step_factor(en).min(1.0);
                if *h < 1e-14 || !en.is_finite() {
                    let p = self.qp(x, y);
                    self.terminate(EventKind::StepFailure, p, "step size underflow", stop);
                    return None;
                }
                continue;
            }
            let grow = step_factor(en);
            // event scan on the accepted step
            let thr = |i: usize| if armed[i] { 0.0 } else { -tol_on };
            let fired = |s: &[f64; 2]| -> Option<usize> {
                (0..4).find(|&i| gfun(kinds[i], s) <= thr(i) && (armed[i] || gfun(kinds[i], s) < thr(i)))
            };
            if fired(&y1).is_none() {
                self.t += step;
                x = y1[0];
                y = y1[1];
                for (i, &k) in kinds.iter().enumerate() {
                    if !armed[i] && gfun(k, &y1) > tol_on {
                        armed[i] = true;
                    }
                }
                self.sample(&State::Free { side, x, y });
                *h = step * grow;
                continue;
            }
            // earliest firing fraction by bisection on "any event fired"
            let at = |th: f64| -> [f64; 2] {
                if th <= 0.0 {
                    y0
                } else {
                    dopri_step(&rhs, &y0, th * step).0
                }
            };
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let mut s_hi = y1;
            while (hi - lo) * step > 0.5 * opts.event_tol {
                let mid = 0.5 * (lo + hi);
                let sm = at(mid);
                if fired(&sm).is_some() {
                    hi = mid;
                    s_hi = sm;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-18 {
                    break;
                }
            }
            let which = fired(&s_hi).expect("event fired at bracket end");
            self.t += hi * step;
            *h = (step * grow).max(1e-6);
            let (ex, ey) = (s_hi[0], s_hi[1]);
            match kinds[which] {
                FreeEv::WrapRight | FreeEv::WrapLeft => {
                    let right = matches!(kinds[which], FreeEv::WrapRight);
                    let loc = self.qp(0.0, ey);
                    let detail = if right { "+1" } else { "-1" };
                    if self.emit(EventKind::WrapX, loc, detail, stop) {
                        self.finish();
                        return None;
                    }
                    let nx = if right { ex - 1.0 } else { ex + 1.0 };
                    return Some(State::Free { side, x: nx, y: ey });
                }
                FreeEv::Outer if model == ManifoldModel::Sphere => {
                    let pole = if side == Side::Plus {
                        QuotientPoint::north_pole()
                    } else {
                        QuotientPoint::south_pole()
                    };
                    let detail = if side == Side::Plus { "north" } else { "south" };
                    self.terminate(EventKind::HitPole, pole, detail, stop);
                    return None;
                }
                FreeEv::Outer => return self.on_sigma_hit(SigmaId::Sigma1, side, unit_mod(ex), stop),
                FreeEv::Sigma2 => return self.on_sigma_hit(SigmaId::Sigma2, side, unit_mod(ex), stop),
            }
        }
    }

    /// Arrival from `side` at abscissa `x` of `sigma`.
    fn on_sigma_hit(&mut self, sigma: SigmaId, side: Side, x: f64, stop: &mut dyn FnMut(&EventRecord) -> bool) -> Option<State> {
        let fld = self.field().clone();
        let (pos, neg) = fld.normals(sigma, x);
        let ps = sigma.positive_side();
        let (n_arr, n_oth) = if side == ps { (pos, neg) } else { (neg, pos) };
        let o_s = sigma.orientation(side);
        let o_o = -o_s;
        let loc = self.qp(x, sigma.level(Side::Minus));
        if o_s * n_arr > -TAU_SIGN {
            // grazing contact, stay on this side
            if self.emit(EventKind::HitSigma, loc, format!("{sigma} graze"), stop) {
                self.finish();
                return None;
            }
            return Some(State::Free {
                side,
                x,
                y: sigma.level(side),
            });
        }
        let cross = if o_o * n_oth > TAU_SIGN {
            true
        } else if o_o * n_oth < -TAU_SIGN {
            false
        } else {
            let other = side.other();
            let l2 = lie_at(fld.field(other), x, sigma.level(other), 2);
            o_o * l2 > 0.0
        };
        if cross {
            let halt = self.emit(EventKind::CrossSigma, loc, format!("{sigma}"), stop);
            let ev = self.events.last().cloned().expect("event");
            self.end_segment(&ev);
            if halt {
                return None;
            }
            if sigma == SigmaId::Sigma1 {
                let detail = if side == Side::Minus { "-1" } else { "+1" };
                if self.emit(EventKind::WrapY, loc, detail, stop) {
                    let s = State::Free { side: side.other(), x, y: sigma.level(side.other()) };
                    self.begin_segment(&s);
                    self.finish();
                    return None;
                }
            }
            let s = State::Free {
                side: side.other(),
                x,
                y: sigma.level(side.other()),
            };
            self.begin_segment(&s);
            Some(s)
        } else {
            let halt = self.emit(EventKind::EnterSliding, loc, format!("{sigma}"), stop);
            let ev = self.events.last().cloned().expect("event");
            self.end_segment(&ev);
            let s = State::Sliding { sigma, x };
            self.begin_segment(&s);
            if halt {
                self.finish();
                return None;
            }
            Some(s)
        }
    }

    fn slide_leg(&mut self, sigma: SigmaId, mut x: f64, h: &mut f64, stop: &mut dyn FnMut(&EventRecord) -> bool) -> Option<State> {
        let opts = *self.p.opts;
        let fld = self.field().clone();
        let rhs = |s: &[f64; 1]| [fld.sliding_velocity(sigma, s[0])];
        let gfun = |k: SlideEv, s: &[f64; 1]| -> f64 {
            match k {
                SlideEv::PosExit => -fld.normals(sigma, s[0]).0,
                SlideEv::NegExit => fld.normals(sigma, s[0]).1,
                SlideEv::WrapRight => 1.0 - s[0],
                SlideEv::WrapLeft => s[0],
            }
        };
        let kinds = [SlideEv::PosExit, SlideEv::NegExit, SlideEv::WrapRight, SlideEv::WrapLeft];
        let level = sigma.level(Side::Minus);
        let rest: Vec<f64> = self
            .p
            .rest
            .iter()
            .filter(|(s, _)| *s == sigma)
            .map(|&(_, r)| r)
            .collect();
        if x == 0.0 && rhs(&[x])[0] < 0.0 {
            x = 1.0;
        }
        let mut armed = [true; 4];
        for i in 0..2 {
            armed[i] = gfun(kinds[i], &[x]) > TAU_SIGN;
        }
        loop {
            if let Some(&r) = rest.iter().find(|&&r| circ_dist(r, x) <= opts.event_tol) {
                let loc = self.qp(r, level);
                self.terminate(EventKind::ReachPseudoEquilibrium, loc, format!("{sigma}"), stop);
                return None;
            }
            let v = rhs(&[x])[0];
            if v == 0.0 {
                let loc = self.qp(x, level);
                self.terminate(EventKind::ReachPseudoEquilibrium, loc, format!("{sigma} rest"), stop);
                return None;
            }
            let remaining = opts.t_max - self.t;
            if remaining <= 0.0 {
                let loc = self.qp(x, level);
                self.terminate(EventKind::TimeLimit, loc, "", stop);
                return None;
            }
            let step = h.min(opts.max_step).min(remaining);
            let y0 = [x];
            let (y1, err) = dopri_step(&rhs, &y0, step);
            let en = error_norm(&y0, &y1, &err, opts.rel_tol, opts.abs_tol);
            if !(en <= 1.0) {
                *h = step * step_factor(en).min(1.0);
                if *h < 1e-14 || !en.is_finite() {
                    let loc = self.qp(x, level);
                    self.terminate(EventKind::StepFailure, loc, "step size underflow", stop);
                    return None;
                }
                continue;
            }
            let grow = step_factor(en);
            let thr = |i: usize| if armed[i] { 0.0 } else { -TAU_SIGN };
            let fired = |s: &[f64; 1]| -> Option<usize> {
                (0..4).find(|&i| {
                    let g = gfun(kinds[i], s);
                    if armed[i] {
                        g <= 0.0
                    } else {
                        g < thr(i)
                    }
                })
            };
            // a rest point crossed inside the step ends the slide there
            if let Some(&r) = rest.iter().find(|&&r| {
                let (a, b) = (y0[0], y1[0]);
                let (lo, hi) = (a.min(b), a.max(b));
                [r, r + 1.0, r - 1.0].iter().any(|&rr| rr >= lo && rr <= hi)
            }) {
                if fired(&y1).is_none() {
                    self.t += step * ((r - y0[0]) / (y1[0] - y0[0])).clamp(0.0, 1.0);
                    let loc = self.qp(r, level);
                    self.terminate(EventKind::ReachPseudoEquilibrium, loc, format!("{sigma}"), stop);
                    return None;
                }
            }
            if fired(&y1).is_none() {
                self.t += step;
                x = y1[0];
                for i in 0..2 {
                    if !armed[i] && gfun(kinds[i], &y1) > TAU_SIGN {
                        armed[i] = true;
                    }
                }
                self.sample(&State::Sliding { sigma, x });
                *h = step * grow;
                continue;
            }
            let at = |th: f64| -> [f64; 1] {
                if th <= 0.0 {
                    y0
                } else {
                    dopri_step(&rhs, &y0, th * step).0
                }
            };
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let mut s_hi = y1;
            let mut s_lo = y0;
            while (hi - lo) * step > 0.5 * opts.event_tol {
                let mid = 0.5 * (lo + hi);
                let sm = at(mid);
                if fired(&sm).is_some() {
                    hi = mid;
                    s_hi = sm;
                } else {
                    lo = mid;
                    s_lo = sm;
                }
                if hi - lo < 1e-18 {
                    break;
                }
            }
            let which = fired(&s_hi).expect("event fired at bracket end");
            self.t += hi * step;
            *h = (step * grow).max(1e-6);
            match kinds[which] {
                SlideEv::WrapRight | SlideEv::WrapLeft => {
                    let right = matches!(kinds[which], SlideEv::WrapRight);
                    let loc = self.qp(0.0, level);
                    if self.emit(EventKind::WrapX, loc, if right { "+1" } else { "-1" }, stop) {
                        self.finish();
                        return None;
                    }
                    x = if right { s_hi[0] - 1.0 } else { s_hi[0] + 1.0 };
                    continue;
                }
                SlideEv::PosExit | SlideEv::NegExit => {
                    let pos_exit = matches!(kinds[which], SlideEv::PosExit);
                    // polish onto the fold: the vanishing normal component
                    let nf = |t: f64| {
                        let (p, n) = fld.normals(sigma, t);
                        if pos_exit {
                            p
                        } else {
                            n
                        }
                    };
                    let (a, b) = (s_lo[0], s_hi[0]);
                    let xf = if nf(a) == 0.0 {
                        a
                    } else if (nf(a) > 0.0) != (nf(b) > 0.0) {
                        let (l, r) = bisect(&nf, a, b, 1e-13);
                        0.5 * (l + r)
                    } else {
                        b
                    };
                    let side = if pos_exit { sigma.positive_side() } else { sigma.positive_side().other() };
                    let loc = self.qp(xf, level);
                    let detail = format!("{sigma} into {}", if side == Side::Plus { "plus" } else { "minus" });
                    let halt = self.emit(EventKind::ExitSlidingAtFold, loc, detail, stop);
                    let ev = self.events.last().cloned().expect("event");
                    self.end_segment(&ev);
                    let s = State::Free {
                        side,
                        x: unit_mod(xf),
                        y: sigma.level(side),
                    };
                    self.begin_segment(&s);
                    if halt {
                        self.finish();
                        return None;
                    }
                    return Some(s);
                }
            }
        }
    }
}

/// Closest passage of a fold orbit over another fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldApproach {
    pub from: TangencyPoint,
    pub to: TangencyPoint,
    /// Signed height over the target circle at the target abscissa; positive
    /// inside the half of the orbit's field.
    pub miss: f64,
    pub direction: Direction,
    pub t: f64,
}

/// Heights at which the orbits through the visible folds of `side` pass over
/// every fold abscissa of that field, within one turn in each time direction.
pub fn fold_approaches(x: &PiecewiseField, side: Side) -> Vec<FoldApproach> {
    let mut folds: Vec<TangencyPoint> = Vec::new();
    for &s in x.sigmas() {
        folds.extend(find_tangencies(x, s).into_iter().filter(|t| t.side == side));
    }
    let f = x.field(side);
    let (lo, hi) = match side {
        Side::Minus => (0.0, 0.5),
        Side::Plus => (0.5, 1.0),
    };
    let mut out = Vec::new();
    for from in folds.iter().filter(|t| t.visibility == Visibility::Visible) {
        let y0 = from.sigma.level(side);
        for dir in [Direction::Forward, Direction::Backward] {
            let sgn = if dir == Direction::Forward { 1.0 } else { -1.0 };
            let rhs = |s: &[f64; 2]| {
                let v = f.eval(s[0], s[1]);
                [sgn * v[0], sgn * v[1]]
            };
            let x0 = from.location.x;
            let mut st = [x0, y0];
            let mut t = 0.0;
            let mut h = 1e-3;
            while t < 10.0 {
                let (s1, err) = dopri_step(&rhs, &st, h);
                let en = error_norm(&st, &s1, &err, 1e-12, 1e-14);
                if !(en <= 1.0) {
                    h *= step_factor(en).min(0.5);
                    if h < 1e-14 {
                        break;
                    }
                    continue;
                }
                // fold abscissae crossed by this step, excluding the start
                for to in &folds {
                    let xt = to.location.x;
                    let (a, b) = (st[0] - x0, s1[0] - x0);
                    let (a, b) = (a.min(b), a.max(b));
                    let k_lo = (a + x0 - xt).ceil() as i64;
                    let k_hi = (b + x0 - xt).floor() as i64;
                    for k in k_lo..=k_hi {
                        let target = xt + k as f64;
                        if (target - x0).abs() < 1e-12 || (target - st[0]).abs() > 1.5 {
                            continue;
                        }
                        let g = |s: &[f64; 2]| s[0] - target;
                        let g0 = g(&st);
                        let frac = bisect(&|fr| g(&dopri_step(&rhs, &st, fr * h).0) * g0.signum(), 0.0, 1.0, 1e-15);
                        let sm = dopri_step(&rhs, &st, frac.1 * h).0;
                        let level = to.sigma.level(side);
                        let inward = if level > 0.5 || (level == 0.5 && side == Side::Minus) { -1.0 } else { 1.0 };
                        out.push(FoldApproach {
                            from: *from,
                            to: *to,
                            miss: inward * (sm[1] - level),
                            direction: dir,
                            t: t + frac.1 * h,
                        });
                    }
                }
                t += h;
                st = s1;
                h = (h * step_factor(en)).min(0.01);
                if (st[0] - x0).abs() > 1.0 + 1e-9 || st[1] < lo - 0.1 || st[1] > hi + 0.1 {
                    break;
                }
            }
        }
    }
    out
}

/// Fold pairs joined by an orbit of one field (codimension-one configuration).
/// Uses the folds of `X⁻`; see [`detect_fold_connection_side`].
pub fn detect_fold_connection(x: &PiecewiseField, tol: f64) -> Vec<(TangencyPoint, TangencyPoint)> {
    detect_fold_connection_side(x, Side::Minus, tol)
}

pub fn detect_fold_connection_side(x: &PiecewiseField, side: Side, tol: f64) -> Vec<(TangencyPoint, TangencyPoint)> {
    let mut out: Vec<(TangencyPoint, TangencyPoint)> = Vec::new();
    for a in fold_approaches(x, side) {
        if a.miss.abs() > tol {
            continue;
        }
        let same = |p: &TangencyPoint, q: &TangencyPoint| {
            p.sigma == q.sigma && circ_dist(p.location.x, q.location.x) < 1e-9
        };
        let (p, q) = match a.direction {
            Direction::Forward => (a.from, a.to),
            Direction::Backward => (a.to, a.from),
        };
        if !out.iter().any(|(u, v)| (same(u, &p) && same(v, &q)) || (same(u, &q) && same(v, &p))) {
            out.push((p, q));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TrigField;
    use crate::manifold::quotient_distance;
    use approx::assert_abs_diff_eq;

    fn torus(a: f64, s1: f64, b: f64, s2: f64) -> PiecewiseField {
        PiecewiseField::new(TrigField::constant(a, s1), TrigField::constant(b, s2), ManifoldModel::Torus)
    }

    fn pt(x: f64, y: f64, model: ManifoldModel) -> QuotientPoint {
        wrap(x, y, model).unwrap()
    }

    #[test]
    fn vertical_meridian_closes() {
        let f = torus(0.0, 1.0, 0.0, 1.0);
        let opts = IntegrationOptions::default().with_t_max(1.0);
        let tr = integrate(&f, pt(0.3, 0.0, ManifoldModel::Torus), &opts, Direction::Forward).unwrap();
        let cross: Vec<_> = tr.events_of(EventKind::CrossSigma).collect();
        assert_abs_diff_eq!(cross[0].location.x, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(cross[0].location.y, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cross[0].t, 0.5, epsilon = 1e-9);
        let end = tr.final_point();
        assert!(quotient_distance(&end, &pt(0.3, 0.0, ManifoldModel::Torus)).unwrap() < 1e-9);
    }

    #[test]
    fn sliding_attractor_constant_speed() {
        let f = torus(2.0, -1.0, 0.0, 1.0);
        let opts = IntegrationOptions::default().with_t_max(5.0);
        let tr = integrate(&f, pt(0.1, 0.25, ManifoldModel::Torus), &opts, Direction::Forward).unwrap();
        let enter = tr.events_of(EventKind::EnterSliding).next().unwrap();
        assert_abs_diff_eq!(enter.t, 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(enter.location.x, 0.1, epsilon = 1e-12);
        assert_eq!(tr.terminal_event().kind, EventKind::TimeLimit);
        let seg = tr.segments.last().unwrap();
        assert_eq!(seg.regime, Regime::Sliding);
        // x advanced by (5 - 0.25) * 1 mod 1
        assert_abs_diff_eq!(tr.final_point().x, unit_mod(0.1 + 4.75), epsilon = 1e-8);
    }

    #[test]
    fn sphere_north_south() {
        let f = PiecewiseField::new(TrigField::constant(0.3, 1.0), TrigField::constant(-0.2, 1.0), ManifoldModel::Sphere);
        let tr = integrate(&f, pt(0.4, 1e-3, ManifoldModel::Sphere), &IntegrationOptions::default(), Direction::Forward).unwrap();
        let last = tr.terminal_event();
        assert_eq!(last.kind, EventKind::HitPole);
        assert_eq!(last.location, QuotientPoint::north_pole());
        assert!(integrate(&f, QuotientPoint::north_pole(), &IntegrationOptions::default(), Direction::Forward).is_err());
    }

    #[test]
    fn backward_time_is_negative_and_reverses() {
        let f = torus(0.37, 1.0, 0.61, 1.0);
        let opts = IntegrationOptions::default().with_t_max(3.3);
        let p0 = pt(0.123, 0.321, ManifoldModel::Torus);
        let fw = integrate(&f, p0, &opts, Direction::Forward).unwrap();
        let bw = integrate(&f, fw.final_point(), &opts, Direction::Backward).unwrap();
        assert!(bw.t_end() < 0.0);
        assert!(quotient_distance(&bw.final_point(), &p0).unwrap() < 1e-7);
    }

    #[test]
    fn branches_at_unstable_start() {
        let f = torus(0.3, 1.0, 0.2, -1.0);
        let mut opts = IntegrationOptions::default().with_t_max(0.2);
        let p0 = pt(0.5, 0.5, ManifoldModel::Torus);
        let up = integrate(&f, p0, &opts, Direction::Forward).unwrap();
        assert_eq!(up.segments[0].regime, Regime::FreePlus);
        opts.branch_policy = BranchPolicy::DeterministicLeft;
        let down = integrate(&f, p0, &opts, Direction::Forward).unwrap();
        assert_eq!(down.segments[0].regime, Regime::FreeMinus);
        opts.branch_policy = BranchPolicy::EnumerateToDepth(3);
        let all = integrate_branches(&f, p0, &opts, Direction::Forward).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].branch_id, "D");
        assert_eq!(all[1].branch_id, "U");
    }

    #[test]
    fn csv_and_jsonl() {
        let f = torus(0.0, 1.0, 0.0, 1.0);
        let tr = integrate(&f, pt(0.3, 0.1, ManifoldModel::Torus), &IntegrationOptions::default().with_t_max(1.0), Direction::Forward).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,x,y,regime,event\n"));
        assert!(csv.contains("CrossSigma"));
        let lines: Vec<_> = tr.events_jsonl().lines().map(String::from).collect();
        assert_eq!(lines.len(), tr.events.len());
        let e: EventRecord = serde_json::from_str(&lines[0]).unwrap();
        assert_eq!(e, tr.events[0]);
    }
}
