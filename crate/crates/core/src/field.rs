//! Piecewise smooth vector fields on the quotient square.
//!
//! `X⁺` lives on the upper half `y ∈ [1/2, 1]`, `X⁻` on the lower half
//! `y ∈ [0, 1/2]`. The switching set is `Σ₂ = {y = 1/2}` and, on the torus,
//! also `Σ₁ = {y = 0 ~ 1}`.
//!
//! Every switching circle carries a normal orientation. On `Σ₂` the positive
//! side is the upper half (`h₂ = y - 1/2`). On `Σ₁` the positive side is the
//! lower half seen just above `y = 0` (`h₁ = y`), so the upper half touches
//! `Σ₁` from the negative side at `y = 1`. All sign rules below are phrased in
//! terms of the normal component on the positive side (`pos`) and on the
//! negative side (`neg`).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{unit_mod, ManifoldModel, QuotientPoint};
use crate::roots::{scan_circle, RootKind};

pub const TAU_SIGN: f64 = 1e-9;
pub const TAU_ON_SIGMA: f64 = 1e-9;
pub const TAU_ROOT: f64 = 1e-12;
pub const N_GRID: usize = 2048;
pub const H_FD: f64 = 1e-6;

/// A smooth planar vector field, 1-periodic in `x`.
pub trait SmoothField: Send + Sync + fmt::Debug {
    fn eval(&self, x: f64, y: f64) -> [f64; 2];

    /// Closed-form jacobian `[[∂ₓv₁, ∂ᵧv₁], [∂ₓv₂, ∂ᵧv₂]]`, if known.
    fn exact_jacobian(&self, _x: f64, _y: f64) -> Option<[[f64; 2]; 2]> {
        None
    }

    fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        self.exact_jacobian(x, y)
            .unwrap_or_else(|| fd_jacobian(self, x, y, H_FD))
    }
}

/// Central finite-difference jacobian with step `h`.
pub fn fd_jacobian<F: SmoothField + ?Sized>(f: &F, x: f64, y: f64, h: f64) -> [[f64; 2]; 2] {
    let xp = f.eval(x + h, y);
    let xm = f.eval(x - h, y);
    let yp = f.eval(x, y + h);
    let ym = f.eval(x, y - h);
    [
        [(xp[0] - xm[0]) / (2.0 * h), (yp[0] - ym[0]) / (2.0 * h)],
        [(xp[1] - xm[1]) / (2.0 * h), (yp[1] - ym[1]) / (2.0 * h)],
    ]
}

/// One scalar component: a trigonometric polynomial in `x`, an optional
/// polynomial in the canonical abscissa `x mod 1`, and an optional additive
/// trigonometric polynomial in `y`.
///
/// `value = c0 + Σ cos[k-1]·cos(2πkx) + sin[k-1]·sin(2πkx)
///        + Σ poly[k-1]·(x mod 1)^k
///        + Σ y_cos[k-1]·cos(2πky) + y_sin[k-1]·sin(2πky)`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrigComponent {
    pub c0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    pub poly: Vec<f64>,
    pub y_cos: Vec<f64>,
    pub y_sin: Vec<f64>,
}

fn fourier(cos: &[f64], sin: &[f64], t: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut dv = 0.0;
    let n = cos.len().max(sin.len());
    for k in 1..=n {
        let w = 2.0 * PI * k as f64;
        let (s, c) = (w * t).sin_cos();
        let a = cos.get(k - 1).copied().unwrap_or(0.0);
        let b = sin.get(k - 1).copied().unwrap_or(0.0);
        v += a * c + b * s;
        dv += w * (b * c - a * s);
    }
    (v, dv)
}

impl TrigComponent {
    pub fn constant(c0: f64) -> Self {
        TrigComponent {
            c0,
            ..Default::default()
        }
    }

    /// `(value, ∂ₓ, ∂ᵧ)`.
    pub fn eval_with_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (fx, dfx) = fourier(&self.cos, &self.sin, x);
        let (fy, dfy) = fourier(&self.y_cos, &self.y_sin, y);
        let (mut p, mut dp) = (0.0, 0.0);
        if !self.poly.is_empty() {
            let u = unit_mod(x);
            let mut pow = 1.0; // u^(k-1)
            for (i, &c) in self.poly.iter().enumerate() {
                dp += (i + 1) as f64 * c * pow;
                pow *= u;
                p += c * pow;
            }
        }
        (self.c0 + fx + fy + p, dfx + dp, dfy)
    }

    pub fn is_y_independent(&self) -> bool {
        self.y_cos.iter().chain(&self.y_sin).all(|&c| c == 0.0)
    }
}

/// A field whose two components are [`TrigComponent`]s.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigField {
    pub v1: TrigComponent,
    pub v2: TrigComponent,
}

impl TrigField {
    pub fn new(v1: TrigComponent, v2: TrigComponent) -> Self {
        TrigField { v1, v2 }
    }

    pub fn constant(a: f64, b: f64) -> Self {
        TrigField::new(TrigComponent::constant(a), TrigComponent::constant(b))
    }
}

impl SmoothField for TrigField {
    fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        [self.v1.eval_with_grad(x, y).0, self.v2.eval_with_grad(x, y).0]
    }

    fn exact_jacobian(&self, x: f64, y: f64) -> Option<[[f64; 2]; 2]> {
        let (_, a, b) = self.v1.eval_with_grad(x, y);
        let (_, c, d) = self.v2.eval_with_grad(x, y);
        Some([[a, b], [c, d]])
    }
}

type EvalFn = dyn Fn(f64, f64) -> [f64; 2] + Send + Sync;
type JacFn = dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync;

/// A field given by closures; jacobian falls back to finite differences.
#[derive(Clone)]
pub struct FnField {
    name: String,
    eval: Arc<EvalFn>,
    jac: Option<Arc<JacFn>>,
}

impl FnField {
    pub fn new(name: impl Into<String>, eval: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static) -> Self {
        FnField {
            name: name.into(),
            eval: Arc::new(eval),
            jac: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnField({})", self.name)
    }
}

impl SmoothField for FnField {
    fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        (self.eval)(x, y)
    }

    fn exact_jacobian(&self, x: f64, y: f64) -> Option<[[f64; 2]; 2]> {
        self.jac.as_ref().map(|j| j(x, y))
    }
}

/// Time-reversed field.
#[derive(Debug, Clone)]
struct Negated(Arc<dyn SmoothField>);

impl SmoothField for Negated {
    fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        let v = self.0.eval(x, y);
        [-v[0], -v[1]]
    }

    fn exact_jacobian(&self, x: f64, y: f64) -> Option<[[f64; 2]; 2]> {
        self.0
            .exact_jacobian(x, y)
            .map(|j| [[-j[0][0], -j[0][1]], [-j[1][0], -j[1][1]]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SigmaId {
    Sigma1,
    Sigma2,
}

impl SigmaId {
    /// The half whose points touch this circle from the positive normal side.
    pub fn positive_side(self) -> Side {
        match self {
            SigmaId::Sigma1 => Side::Minus,
            SigmaId::Sigma2 => Side::Plus,
        }
    }

    /// Raw `y` at which `side` touches this circle.
    pub fn level(self, side: Side) -> f64 {
        match (self, side) {
            (SigmaId::Sigma2, _) => 0.5,
            (SigmaId::Sigma1, Side::Minus) => 0.0,
            (SigmaId::Sigma1, Side::Plus) => 1.0,
        }
    }

    /// `+1` if `side` is on the positive normal side, else `-1`.
    pub fn orientation(self, side: Side) -> f64 {
        if side == self.positive_side() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn contains(self, p: &QuotientPoint) -> bool {
        match self {
            SigmaId::Sigma2 => (p.y - 0.5).abs() <= TAU_ON_SIGMA,
            SigmaId::Sigma1 => {
                p.model == ManifoldModel::Torus && (p.y <= TAU_ON_SIGMA || p.y >= 1.0 - TAU_ON_SIGMA)
            }
        }
    }
}

impl fmt::Display for SigmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaId::Sigma1 => f.write_str("sigma1"),
            SigmaId::Sigma2 => f.write_str("sigma2"),
        }
    }
}

/// The pair `(X⁺, X⁻)` on a manifold model.
#[derive(Debug, Clone)]
pub struct PiecewiseField {
    plus: Arc<dyn SmoothField>,
    minus: Arc<dyn SmoothField>,
    model: ManifoldModel,
}

impl PiecewiseField {
    pub fn new(
        plus: impl SmoothField + 'static,
        minus: impl SmoothField + 'static,
        model: ManifoldModel,
    ) -> Self {
        PiecewiseField {
            plus: Arc::new(plus),
            minus: Arc::new(minus),
            model,
        }
    }

    pub fn from_arcs(
        plus: Arc<dyn SmoothField>,
        minus: Arc<dyn SmoothField>,
        model: ManifoldModel,
    ) -> Self {
        PiecewiseField { plus, minus, model }
    }

    pub fn model(&self) -> ManifoldModel {
        self.model
    }

    pub fn with_model(&self, model: ManifoldModel) -> Self {
        PiecewiseField {
            model,
            ..self.clone()
        }
    }

    pub fn field(&self, side: Side) -> &dyn SmoothField {
        match side {
            Side::Plus => self.plus.as_ref(),
            Side::Minus => self.minus.as_ref(),
        }
    }

    pub fn plus(&self) -> &dyn SmoothField {
        self.plus.as_ref()
    }

    pub fn minus(&self) -> &dyn SmoothField {
        self.minus.as_ref()
    }

    /// Switching circles present on this model.
    pub fn sigmas(&self) -> &'static [SigmaId] {
        match self.model {
            ManifoldModel::Torus => &[SigmaId::Sigma1, SigmaId::Sigma2],
            ManifoldModel::Sphere => &[SigmaId::Sigma2],
        }
    }

    pub fn has_sigma(&self, sigma: SigmaId) -> bool {
        self.sigmas().contains(&sigma)
    }

    /// `X(t)` run backwards: both fields negated.
    pub fn reversed(&self) -> Self {
        PiecewiseField {
            plus: Arc::new(Negated(self.plus.clone())),
            minus: Arc::new(Negated(self.minus.clone())),
            model: self.model,
        }
    }

    pub fn eval_side(&self, side: Side, x: f64, y: f64) -> [f64; 2] {
        self.field(side).eval(x, y)
    }

    /// Field of `side` evaluated where that side touches `sigma`.
    pub fn on_sigma(&self, sigma: SigmaId, side: Side, x: f64) -> [f64; 2] {
        self.eval_side(side, x, sigma.level(side))
    }

    /// Normal components `(pos, neg)` at abscissa `x` of `sigma`.
    pub fn normals(&self, sigma: SigmaId, x: f64) -> (f64, f64) {
        let ps = sigma.positive_side();
        (
            self.on_sigma(sigma, ps, x)[1],
            self.on_sigma(sigma, ps.other(), x)[1],
        )
    }

    /// Tangential components `(pos, neg)`.
    pub fn tangentials(&self, sigma: SigmaId, x: f64) -> (f64, f64) {
        let ps = sigma.positive_side();
        (
            self.on_sigma(sigma, ps, x)[0],
            self.on_sigma(sigma, ps.other(), x)[0],
        )
    }

    /// Filippov sliding velocity along `sigma`, in real time.
    ///
    /// The convex combination of the two fields tangent to `sigma`; only
    /// meaningful where the normals have opposite signs.
    pub fn sliding_velocity(&self, sigma: SigmaId, x: f64) -> f64 {
        let (p2, n2) = self.normals(sigma, x);
        let (p1, n1) = self.tangentials(sigma, x);
        (n2 * p1 - p2 * n1) / (n2 - p2)
    }

    /// Numerator of [`Self::sliding_velocity`]; shares its zeros and, on
    /// stable sliding, its sign.
    pub fn sliding_numerator(&self, sigma: SigmaId, x: f64) -> f64 {
        let (p2, n2) = self.normals(sigma, x);
        let (p1, n1) = self.tangentials(sigma, x);
        n2 * p1 - p2 * n1
    }

    /// Normalized sliding field `X₁^pos − X₁^neg` (on `Σ₂`: `X₁⁺ − X₁⁻`).
    pub fn normalized_sliding(&self, sigma: SigmaId, x: f64) -> f64 {
        let (p1, n1) = self.tangentials(sigma, x);
        p1 - n1
    }

    fn check_sigma(&self, sigma: SigmaId, p: &QuotientPoint) -> Result<()> {
        if p.model != self.model {
            return Err(Error::ModelMismatch(p.model, self.model));
        }
        if !self.has_sigma(sigma) {
            return Err(Error::domain(format!("{sigma} does not exist on the {}", self.model)));
        }
        if !sigma.contains(p) {
            return Err(Error::domain(format!(
                "point ({}, {}) is not on {sigma}",
                p.x, p.y
            )));
        }
        Ok(())
    }
}

/// Lie derivative of `h` along `f` at `(x, y)`: order 1 is `v₂`, order 2 is
/// `v₁∂ₓv₂ + v₂∂ᵧv₂`.
pub fn lie_at(f: &dyn SmoothField, x: f64, y: f64, order: u8) -> f64 {
    let v = f.eval(x, y);
    match order {
        1 => v[1],
        _ => {
            let j = f.jacobian(x, y);
            v[0] * j[1][0] + v[1] * j[1][1]
        }
    }
}

/// Lie derivative of the switching function of `sigma` along `f` at `p`.
pub fn lie_derivative(f: &dyn SmoothField, sigma: SigmaId, p: &QuotientPoint, order: u8) -> Result<f64> {
    if !(1..=2).contains(&order) {
        return Err(Error::domain(format!("Lie derivative order {order} unsupported")));
    }
    if !sigma.contains(p) {
        return Err(Error::domain(format!(
            "point ({}, {}) is not on {sigma}",
            p.x, p.y
        )));
    }
    Ok(lie_at(f, p.x, p.y, order))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    Crossing,
    StableSliding,
    UnstableSliding,
    Tangential,
}

impl RegionLabel {
    pub fn is_sliding(self) -> bool {
        matches!(self, RegionLabel::StableSliding | RegionLabel::UnstableSliding)
    }
}

/// Filippov label from the normal components on the two sides.
pub fn label_from_normals(pos: f64, neg: f64, tau_sign: f64) -> RegionLabel {
    if pos.abs() < tau_sign || neg.abs() < tau_sign {
        RegionLabel::Tangential
    } else if (pos > 0.0) == (neg > 0.0) {
        RegionLabel::Crossing
    } else if pos < 0.0 {
        RegionLabel::StableSliding
    } else {
        RegionLabel::UnstableSliding
    }
}

pub fn classify_point(x: &PiecewiseField, sigma: SigmaId, p: &QuotientPoint) -> Result<RegionLabel> {
    x.check_sigma(sigma, p)?;
    let (pos, neg) = x.normals(sigma, p.x);
    Ok(label_from_normals(pos, neg, TAU_SIGN))
}

/// Label at abscissa `x` without membership checks.
pub fn label_at(x: &PiecewiseField, sigma: SigmaId, at: f64) -> RegionLabel {
    let (pos, neg) = x.normals(sigma, at);
    label_from_normals(pos, neg, TAU_SIGN)
}

/// Normalized sliding field at a sliding point.
pub fn sliding_field(x: &PiecewiseField, sigma: SigmaId, p: &QuotientPoint) -> Result<f64> {
    let label = classify_point(x, sigma, p)?;
    if !label.is_sliding() {
        return Err(Error::domain(format!(
            "({}, {}) is {label:?}, not sliding",
            p.x, p.y
        )));
    }
    Ok(x.normalized_sliding(sigma, p.x))
}

/// Real-time Filippov sliding velocity at a sliding point.
pub fn filippov_sliding_velocity(x: &PiecewiseField, sigma: SigmaId, p: &QuotientPoint) -> Result<f64> {
    let label = classify_point(x, sigma, p)?;
    if !label.is_sliding() {
        return Err(Error::domain(format!(
            "({}, {}) is {label:?}, not sliding",
            p.x, p.y
        )));
    }
    Ok(x.sliding_velocity(sigma, p.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Visibility {
    Visible,
    Invisible,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangencyPoint {
    pub sigma: SigmaId,
    pub location: QuotientPoint,
    pub side: Side,
    pub visibility: Visibility,
    pub second_lie: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stability {
    Attractor,
    Repeller,
    NonHyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoEquilibrium {
    pub sigma: SigmaId,
    pub location: QuotientPoint,
    pub index: i8,
    pub stability: Stability,
    /// Root sits on the boundary of its sliding interval.
    pub boundary: bool,
}

/// Structural observations that are reported rather than raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Finding {
    /// Odd number of tangencies on a circle: a line of singularities must exist.
    ParityViolation { sigma: SigmaId, count: usize },
    /// The normal component of a field vanishes identically on an arc.
    TangencyLine { sigma: SigmaId, side: Side, start: f64, end: f64 },
    /// The normal component jumps in sign without passing through zero.
    Discontinuity { sigma: SigmaId, side: Side, x: f64 },
    /// A tangency that is not a fold.
    DegenerateTangency { sigma: SigmaId, side: Side, x: f64 },
    /// Both fields tangent at the same point.
    TwoFold { sigma: SigmaId, x: f64 },
    /// Stable and unstable sliding both present on one circle.
    MixedSliding { sigma: SigmaId },
    /// Consecutive intervals carry equal labels.
    AlternationBroken { sigma: SigmaId, at: f64 },
    /// Odd pseudo-equilibrium count: a saddle-node is expected.
    SaddleNodeCandidate { sigma: SigmaId, count: usize },
}

/// Knobs shared by the Σ detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectOptions {
    pub n_grid: usize,
    pub tau_root: f64,
    pub tau_sign: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            n_grid: N_GRID,
            tau_root: TAU_ROOT,
            tau_sign: TAU_SIGN,
        }
    }
}

fn sigma_point(x: &PiecewiseField, sigma: SigmaId, at: f64) -> QuotientPoint {
    let y = match sigma {
        SigmaId::Sigma2 => 0.5,
        SigmaId::Sigma1 => 0.0,
    };
    QuotientPoint {
        x: unit_mod(at),
        y,
        model: x.model,
    }
}

struct SideScan {
    tangencies: Vec<TangencyPoint>,
    findings: Vec<Finding>,
    jumps: Vec<f64>,
}

fn scan_side(x: &PiecewiseField, sigma: SigmaId, side: Side, opts: &DetectOptions) -> SideScan {
    let level = sigma.level(side);
    let f = x.field(side);
    let g = |t: f64| f.eval(t, level)[1];
    let scan = scan_circle(&g, opts.n_grid, opts.tau_root);
    let o = sigma.orientation(side);
    let mut tangencies = Vec::new();
    let mut findings = Vec::new();
    for r in &scan.roots {
        let l2 = lie_at(f, r.x, level, 2);
        let visibility = if r.kind == RootKind::Touch {
            Visibility::Degenerate
        } else if o * l2 > opts.tau_sign {
            Visibility::Visible
        } else if o * l2 < -opts.tau_sign {
            Visibility::Invisible
        } else {
            Visibility::Degenerate
        };
        if visibility == Visibility::Degenerate {
            findings.push(Finding::DegenerateTangency { sigma, side, x: r.x });
        }
        tangencies.push(TangencyPoint {
            sigma,
            location: sigma_point(x, sigma, r.x),
            side,
            visibility,
            second_lie: l2,
        });
    }
    for &(start, end) in &scan.flat {
        findings.push(Finding::TangencyLine { sigma, side, start, end });
    }
    for &j in &scan.jumps {
        findings.push(Finding::Discontinuity { sigma, side, x: j });
    }
    SideScan {
        tangencies,
        findings,
        jumps: scan.jumps,
    }
}

/// Tangential singularities of both fields on `sigma`, sorted by abscissa.
pub fn find_tangencies(x: &PiecewiseField, sigma: SigmaId) -> Vec<TangencyPoint> {
    find_tangencies_with(x, sigma, &DetectOptions::default())
}

pub fn find_tangencies_with(x: &PiecewiseField, sigma: SigmaId, opts: &DetectOptions) -> Vec<TangencyPoint> {
    let mut t: Vec<TangencyPoint> = [Side::Plus, Side::Minus]
        .into_iter()
        .flat_map(|s| scan_side(x, sigma, s, opts).tangencies)
        .collect();
    t.sort_by(|a, b| a.location.x.total_cmp(&b.location.x));
    t
}

/// One maximal arc `(start, end)` of a switching circle. `start ∈ [0,1)` and
/// `start < end ≤ start + 1`; an arc through the seam has `end > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaInterval {
    pub start: f64,
    pub end: f64,
    pub label: RegionLabel,
}

impl SigmaInterval {
    /// Whether canonical abscissa `x` lies strictly inside the arc.
    pub fn contains(&self, x: f64) -> bool {
        let x = unit_mod(x);
        let lift = if x < self.start { x + 1.0 } else { x };
        lift > self.start && lift < self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaDecomposition {
    pub sigma_id: SigmaId,
    pub intervals: Vec<SigmaInterval>,
    pub tangencies: Vec<TangencyPoint>,
    pub pseudo_eq: Vec<PseudoEquilibrium>,
    pub findings: Vec<Finding>,
}

impl SigmaDecomposition {
    pub fn interval_at(&self, x: f64) -> Option<&SigmaInterval> {
        self.intervals.iter().find(|i| i.contains(x))
    }

    pub fn has_finding(&self, pred: impl Fn(&Finding) -> bool) -> bool {
        self.findings.iter().any(pred)
    }
}

/// Cyclic partition of `sigma` into crossing and sliding arcs.
pub fn decompose_sigma(x: &PiecewiseField, sigma: SigmaId) -> SigmaDecomposition {
    decompose_sigma_with(x, sigma, &DetectOptions::default())
}

pub fn decompose_sigma_with(x: &PiecewiseField, sigma: SigmaId, opts: &DetectOptions) -> SigmaDecomposition {
    let scans = [
        scan_side(x, sigma, Side::Plus, opts),
        scan_side(x, sigma, Side::Minus, opts),
    ];
    let mut findings: Vec<Finding> = Vec::new();
    let mut tangencies: Vec<TangencyPoint> = Vec::new();
    let mut cuts: Vec<f64> = Vec::new();
    for s in &scans {
        findings.extend(s.findings.iter().cloned());
        tangencies.extend(s.tangencies.iter().copied());
        cuts.extend(s.tangencies.iter().map(|t| t.location.x));
        cuts.extend(s.jumps.iter().copied());
    }
    tangencies.sort_by(|a, b| a.location.x.total_cmp(&b.location.x));
    for w in tangencies.windows(2) {
        if w[0].side != w[1].side && (w[0].location.x - w[1].location.x).abs() <= 1e3 * opts.tau_root {
            findings.push(Finding::TwoFold {
                sigma,
                x: w[0].location.x,
            });
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e3 * opts.tau_root);
    let fold_count = tangencies
        .iter()
        .filter(|t| t.visibility != Visibility::Degenerate)
        .count();
    if fold_count % 2 == 1 {
        findings.push(Finding::ParityViolation {
            sigma,
            count: fold_count,
        });
    }

    let label_mid = |a: f64, b: f64| label_at(x, sigma, unit_mod(0.5 * (a + b)));
    let mut intervals: Vec<SigmaInterval> = Vec::new();
    if cuts.is_empty() {
        intervals.push(SigmaInterval {
            start: 0.0,
            end: 1.0,
            label: label_at(x, sigma, 0.0),
        });
    } else {
        let n = cuts.len();
        for i in 0..n {
            let a = cuts[i];
            let b = if i + 1 < n { cuts[i + 1] } else { cuts[0] + 1.0 };
            intervals.push(SigmaInterval {
                start: a,
                end: b,
                label: label_mid(a, b),
            });
        }
        // merge equal neighbours (touch roots leave the label unchanged)
        let mut merged: Vec<SigmaInterval> = Vec::new();
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if last.label == iv.label => last.end = iv.end,
                _ => merged.push(iv),
            }
        }
        if merged.len() > 1 && merged[0].label == merged[merged.len() - 1].label {
            let first = merged.remove(0);
            let last = merged.last_mut().expect("nonempty");
            last.end = first.end + 1.0;
        }
        if merged.len() == 1 {
            merged[0] = SigmaInterval {
                start: 0.0,
                end: 1.0,
                label: merged[0].label,
            };
        }
        intervals = merged;
    }
    // canonical cyclic order: by start abscissa
    for iv in &mut intervals {
        if iv.start >= 1.0 {
            iv.start -= 1.0;
            iv.end -= 1.0;
        }
    }
    intervals.sort_by(|a, b| a.start.total_cmp(&b.start));

    let n = intervals.len();
    if n > 1 {
        for i in 0..n {
            let (a, b) = (&intervals[i], &intervals[(i + 1) % n]);
            if a.label == b.label {
                findings.push(Finding::AlternationBroken { sigma, at: b.start });
            }
        }
    }
    let has = |l: RegionLabel| intervals.iter().any(|i| i.label == l);
    if has(RegionLabel::StableSliding) && has(RegionLabel::UnstableSliding) {
        findings.push(Finding::MixedSliding { sigma });
    }

    let pseudo_eq = pseudo_equilibria_in(x, sigma, &intervals, opts);
    SigmaDecomposition {
        sigma_id: sigma,
        intervals,
        tangencies,
        pseudo_eq,
        findings,
    }
}

fn pseudo_equilibria_in(
    x: &PiecewiseField,
    sigma: SigmaId,
    intervals: &[SigmaInterval],
    opts: &DetectOptions,
) -> Vec<PseudoEquilibrium> {
    let xs = |t: f64| x.normalized_sliding(sigma, t);
    let scan = scan_circle(&xs, opts.n_grid, opts.tau_root);
    let mut out = Vec::new();
    for r in &scan.roots {
        let inside = intervals
            .iter()
            .find(|iv| iv.label.is_sliding() && iv.contains(r.x));
        let boundary_hit = intervals.iter().find(|iv| {
            iv.label.is_sliding()
                && [iv.start, iv.end]
                    .iter()
                    .any(|&e| (unit_mod(e) - r.x).abs().min(1.0 - (unit_mod(e) - r.x).abs()) <= 1e3 * opts.tau_root)
        });
        if inside.is_none() && boundary_hit.is_none() {
            continue;
        }
        let boundary = inside.is_none()
            || [inside.unwrap().start, inside.unwrap().end].iter().any(|&e| {
                let d = (unit_mod(e) - r.x).abs();
                d.min(1.0 - d) <= 1e3 * opts.tau_root
            });
        let d = (xs(r.x + H_FD) - xs(r.x - H_FD)) / (2.0 * H_FD);
        let index: i8 = if r.kind == RootKind::Touch || d.abs() < opts.tau_sign {
            0
        } else if d > 0.0 {
            1
        } else {
            -1
        };
        let stability = match index {
            -1 => Stability::Attractor,
            1 => Stability::Repeller,
            _ => Stability::NonHyperbolic,
        };
        out.push(PseudoEquilibrium {
            sigma,
            location: sigma_point(x, sigma, r.x),
            index,
            stability,
            boundary,
        });
    }
    out
}

/// Zeros of the normalized sliding field inside sliding arcs, cyclically ordered.
pub fn find_pseudo_equilibria(x: &PiecewiseField, sigma: SigmaId) -> Vec<PseudoEquilibrium> {
    decompose_sigma(x, sigma).pseudo_eq
}

/// Zeros of the real-time sliding velocity inside sliding arcs.
pub(crate) fn sliding_rest_points(x: &PiecewiseField, sigma: SigmaId, opts: &DetectOptions) -> Vec<f64> {
    let num = |t: f64| x.sliding_numerator(sigma, t);
    let scan = scan_circle(&num, opts.n_grid, opts.tau_root);
    scan.roots
        .iter()
        .map(|r| r.x)
        .filter(|&t| label_at(x, sigma, t).is_sliding())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaParity {
    pub sigma: SigmaId,
    pub fold_count: usize,
    pub visible: usize,
    pub invisible: usize,
    pub degenerate: usize,
    pub even: bool,
    pub pseudo_eq_count: usize,
    pub alternation_ok: bool,
}

/// Visible folds of one field on one circle against invisible folds of the
/// same field on the other circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingCheck {
    pub side: Side,
    pub visible_on: SigmaId,
    pub invisible_on: SigmaId,
    pub visible: usize,
    pub invisible: usize,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub per_sigma: Vec<SigmaParity>,
    pub total_folds: usize,
    pub parity_even: bool,
    pub visible_invisible_pairing: Vec<PairingCheck>,
    pub pseudo_eq_count: usize,
    pub alternation_ok: bool,
    pub findings: Vec<Finding>,
    pub decompositions: Vec<SigmaDecomposition>,
}

impl ParityReport {
    pub fn parity_violation(&self) -> bool {
        self.findings
            .iter()
            .any(|f| matches!(f, Finding::ParityViolation { .. }))
    }

    pub fn fold_count(&self, sigma: SigmaId) -> Option<usize> {
        self.per_sigma
            .iter()
            .find(|s| s.sigma == sigma)
            .map(|s| s.fold_count)
    }
}

fn indices_alternate(pe: &[PseudoEquilibrium]) -> bool {
    let idx: Vec<i8> = pe.iter().map(|p| p.index).collect();
    if idx.iter().any(|&i| i == 0) || idx.len() < 2 {
        return true;
    }
    let n = idx.len();
    (0..n).all(|i| idx[i] != idx[(i + 1) % n])
}

/// Parity, pairing and alternation checks over every switching circle.
pub fn parity_report(x: &PiecewiseField) -> ParityReport {
    parity_report_with(x, &DetectOptions::default())
}

pub fn parity_report_with(x: &PiecewiseField, opts: &DetectOptions) -> ParityReport {
    let decs: Vec<SigmaDecomposition> = x
        .sigmas()
        .iter()
        .map(|&s| decompose_sigma_with(x, s, opts))
        .collect();
    let mut findings = Vec::new();
    let mut per_sigma = Vec::new();
    for d in &decs {
        findings.extend(d.findings.iter().cloned());
        let count = |v: Visibility| d.tangencies.iter().filter(|t| t.visibility == v).count();
        let (visible, invisible, degenerate) = (
            count(Visibility::Visible),
            count(Visibility::Invisible),
            count(Visibility::Degenerate),
        );
        let fold_count = visible + invisible;
        let pe_count = d.pseudo_eq.len();
        if pe_count % 2 == 1 {
            findings.push(Finding::SaddleNodeCandidate {
                sigma: d.sigma_id,
                count: pe_count,
            });
        }
        let alternation_ok = !d
            .findings
            .iter()
            .any(|f| matches!(f, Finding::AlternationBroken { .. } | Finding::MixedSliding { .. }))
            && indices_alternate(&d.pseudo_eq);
        per_sigma.push(SigmaParity {
            sigma: d.sigma_id,
            fold_count,
            visible,
            invisible,
            degenerate,
            even: fold_count % 2 == 0,
            pseudo_eq_count: pe_count,
            alternation_ok,
        });
    }
    let mut pairing = Vec::new();
    if x.model() == ManifoldModel::Torus && decs.len() == 2 {
        for side in [Side::Plus, Side::Minus] {
            for (i, j) in [(0usize, 1usize), (1, 0)] {
                let vis = decs[i]
                    .tangencies
                    .iter()
                    .filter(|t| t.side == side && t.visibility == Visibility::Visible)
                    .count();
                let inv = decs[j]
                    .tangencies
                    .iter()
                    .filter(|t| t.side == side && t.visibility == Visibility::Invisible)
                    .count();
                pairing.push(PairingCheck {
                    side,
                    visible_on: decs[i].sigma_id,
                    invisible_on: decs[j].sigma_id,
                    visible: vis,
                    invisible: inv,
                    ok: vis == inv,
                });
            }
        }
    }
    let total_folds = per_sigma.iter().map(|s| s.fold_count).sum();
    let pseudo_eq_count = per_sigma.iter().map(|s| s.pseudo_eq_count).sum();
    ParityReport {
        parity_even: per_sigma.iter().all(|s| s.even),
        alternation_ok: per_sigma.iter().all(|s| s.alternation_ok),
        per_sigma,
        total_folds,
        visible_invisible_pairing: pairing,
        pseudo_eq_count,
        findings,
        decompositions: decs,
    }
}
