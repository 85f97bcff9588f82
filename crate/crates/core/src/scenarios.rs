//! Named, parameterized systems with closed-form derivatives.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    decompose_sigma, fd_jacobian, Finding, PiecewiseField, SigmaId, Side, TrigComponent,
    TrigField, Visibility,
};
use crate::manifold::ManifoldModel;
use crate::ode::{flow_smooth, SmoothOpts, SmoothStop};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// Parameters as given or derived, in text form (exact values stay exact).
    pub params: BTreeMap<String, String>,
    pub field: PiecewiseField,
    /// Structural warnings raised while building, e.g. `degenerate`.
    pub flags: Vec<String>,
    /// Verdict the classification pipeline is expected to return.
    pub expected: Option<String>,
}

impl Scenario {
    fn new(name: &str, field: PiecewiseField) -> Self {
        Scenario {
            name: name.into(),
            params: BTreeMap::new(),
            field,
            flags: Vec::new(),
            expected: None,
        }
    }

    fn param(mut self, k: &str, v: impl ToString) -> Self {
        self.params.insert(k.into(), v.to_string());
        self
    }

    fn expect(mut self, verdict: &str) -> Self {
        self.expected = Some(verdict.into());
        self
    }

    pub fn is_degenerate(&self) -> bool {
        self.flags.iter().any(|f| f == "degenerate")
    }

    /// Periodicity in `x` and closed-form jacobians against finite differences.
    pub fn sanity_check(&self) -> Result<()> {
        for side in [Side::Plus, Side::Minus] {
            let f = self.field.field(side);
            for k in 0..64 {
                let x = k as f64 / 64.0 + 0.003;
                let y = if side == Side::Plus { 0.55 + 0.4 * (k as f64 / 64.0) } else { 0.05 + 0.4 * (k as f64 / 64.0) };
                let (a, b) = (f.eval(x, y), f.eval(x + 1.0, y));
                if (a[0] - b[0]).abs() > 1e-9 || (a[1] - b[1]).abs() > 1e-9 {
                    return Err(Error::domain(format!("{}: field is not 1-periodic in x at {x}", self.name)));
                }
                if let Some(j) = f.exact_jacobian(x, y) {
                    let n = fd_jacobian(f, x, y, crate::field::H_FD);
                    for i in 0..2 {
                        for l in 0..2 {
                            if (j[i][l] - n[i][l]).abs() > 1e-5 * (1.0 + j[i][l].abs()) {
                                return Err(Error::Numeric(format!("{}: jacobian mismatch at ({x}, {y})", self.name)));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn cos1(amp: f64, c0: f64) -> TrigComponent {
    TrigComponent {
        c0,
        cos: vec![amp],
        ..Default::default()
    }
}

/// `X⁺ = (a, σ₁)`, `X⁻ = (b, σ₂)`.
pub fn regular_normal_form(a: f64, b: f64, sigma1: f64, sigma2: f64, model: ManifoldModel) -> Result<Scenario> {
    for s in [sigma1, sigma2] {
        if s != 1.0 && s != -1.0 {
            return Err(Error::domain(format!("σ must be ±1, got {s}")));
        }
    }
    let field = PiecewiseField::new(TrigField::constant(a, sigma1), TrigField::constant(b, sigma2), model);
    let expected = match (model, sigma1 * sigma2 > 0.0) {
        (ManifoldModel::Torus, true) => "PeriodicFoliation|Equidistributing",
        (ManifoldModel::Torus, false) => "SlidingAttractor|SlidingRepeller",
        (ManifoldModel::Sphere, true) => "NorthSouth",
        (ManifoldModel::Sphere, false) => "SlidingCycle",
    };
    Ok(Scenario::new("regular", field)
        .param("a", a)
        .param("b", b)
        .param("sigma1", sigma1)
        .param("sigma2", sigma2)
        .expect(expected))
}

/// Abscissa reached at `y = 1` by the flow of `(cos 2πx, 1)` from
/// `(3/4 − ε, 1/2)`.
pub fn limit_cycle_landing(eps: f64) -> Result<f64> {
    let opts = SmoothOpts {
        rel_tol: 1e-13,
        abs_tol: 1e-15,
        max_step: 0.01,
        t_max: 2.0,
        event_tol: 1e-14,
    };
    let rhs = |s: &[f64; 2]| [(2.0 * PI * s[0]).cos(), 1.0];
    match flow_smooth(&rhs, [0.75 - eps, 0.5], &opts, &|s: &[f64; 2]| [1.0 - s[1]], &mut |_, _| {}) {
        SmoothStop::Event { y, .. } => Ok(y[0]),
        _ => Err(Error::Numeric("upper flow did not reach y = 1".into())),
    }
}

/// The limit-cycle example: `X⁺ = (cos 2πx, 1)`, `X⁻ = (1, α)` with `α`
/// chosen so the orbit from `(x₁, 0)` closes through `(3/4 − ε, 1/2)`.
pub fn example_limit_cycle(eps: f64) -> Result<Scenario> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(Error::domain(format!("ε = {eps} outside (0, 1/4)")));
    }
    let x1 = limit_cycle_landing(eps)?;
    let v1 = 0.75 - eps - x1;
    let alpha = 0.5 / v1;
    let field = PiecewiseField::new(
        TrigField::new(cos1(1.0, 0.0), TrigComponent::constant(1.0)),
        TrigField::constant(1.0, alpha),
        ManifoldModel::Torus,
    );
    Ok(Scenario::new("limit-cycle", field)
        .param("eps", eps)
        .param("alpha", alpha)
        .param("x1", x1)
        .expect("LimitCycles"))
}

/// `X⁺ = (−1, −9/2 + 24x − 24x²)`, `X⁻ = (−1, α)`.
pub fn four_fold_family(alpha: f64) -> Scenario {
    let q = TrigComponent {
        c0: -4.5,
        poly: vec![24.0, -24.0],
        ..Default::default()
    };
    let field = PiecewiseField::new(
        TrigField::new(TrigComponent::constant(-1.0), q),
        TrigField::constant(-1.0, alpha),
        ManifoldModel::Torus,
    );
    let mut s = Scenario::new("four-fold", field).param("alpha", alpha);
    if alpha == 0.0 {
        s.flags.push("degenerate".into());
    }
    s
}

/// `X⁺ = (α, β)`, `X⁻ = (1, g(x, y))`.
pub fn fold_regular_model(alpha: f64, beta: f64, g: TrigComponent, model: ManifoldModel) -> Result<Scenario> {
    if alpha == 1.0 {
        return Err(Error::domain("α = 1 makes the sliding field vanish identically"));
    }
    if beta >= 0.0 {
        return Err(Error::domain(format!("β = {beta} must be negative")));
    }
    let field = PiecewiseField::new(
        TrigField::constant(alpha, beta),
        TrigField::new(TrigComponent::constant(1.0), g.clone()),
        model,
    );
    let dec = decompose_sigma(&field, SigmaId::Sigma2);
    let degenerate = dec.tangencies.iter().any(|t| t.visibility == Visibility::Degenerate)
        || dec.has_finding(|f| matches!(f, Finding::TangencyLine { side: Side::Minus, .. } | Finding::DegenerateTangency { .. }));
    let mut s = Scenario::new("fold-regular", field)
        .param("alpha", alpha)
        .param("beta", beta)
        .param("g", serde_json::to_string(&g).expect("component serializes"));
    if degenerate {
        s.flags.push("degenerate".into());
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    ChaoticTorus,
    TwoCycleBand,
    ChaoticSphere,
}

/// `X⁺ = (2, −1)`, `X⁻ = (1, 0.4 cos 2πx + 0.1)` on the torus.
pub fn chaotic_torus() -> Scenario {
    let mut s = fold_regular_model(2.0, -1.0, cos1(0.4, 0.1), ManifoldModel::Torus).expect("preset is valid");
    s.name = "chaotic-torus".into();
    s.expect("Chaotic")
}

/// `X⁻ = (1, 0.3 cos 2πx + 0.2 (sin 2πy − cos 0.2π))`: two hyperbolic cycles.
pub fn two_cycle_band() -> Scenario {
    let g = TrigComponent {
        c0: -0.2 * (0.2 * PI).cos(),
        cos: vec![0.3],
        y_sin: vec![0.2],
        ..Default::default()
    };
    let mut s = fold_regular_model(2.0, -1.0, g, ManifoldModel::Torus).expect("preset is valid");
    s.name = "two-cycle-band".into();
    s.expect("MinimalBands")
}

pub fn chaotic_sphere() -> Scenario {
    let mut s = fold_regular_model(2.0, -1.0, cos1(0.4, 0.1), ManifoldModel::Sphere).expect("preset is valid");
    s.name = "chaotic-sphere".into();
    s.expect("SphereDecomposition")
}

pub fn preset(p: Preset) -> Scenario {
    match p {
        Preset::ChaoticTorus => chaotic_torus(),
        Preset::TwoCycleBand => two_cycle_band(),
        Preset::ChaoticSphere => chaotic_sphere(),
    }
}

/// `X⁻ = (1, c − cos 2πx)`: the orbit from the visible fold on `y = 1/2`
/// touches `y = 0` at a fold when `√(1−c²) − c·arccos c = π/2`.
pub fn fold_connection_family(c: f64) -> Result<Scenario> {
    if !(c > -1.0 && c < 1.0) {
        return Err(Error::domain(format!("c = {c} outside (−1, 1)")));
    }
    let field = PiecewiseField::new(
        TrigField::constant(2.0, -1.0),
        TrigField::new(TrigComponent::constant(1.0), cos1(-1.0, c)),
        ManifoldModel::Torus,
    );
    Ok(Scenario::new("fold-connection", field).param("c", c))
}

/// Closed-form critical value of [`fold_connection_family`].
pub fn fold_connection_critical_c() -> f64 {
    let g = |c: f64| (1.0 - c * c).sqrt() - c * c.acos() - PI / 2.0;
    let (mut a, mut b) = (-0.99, 0.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (g(m) > 0.0) == (g(a) > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Stable sliding on all of `Σ₂` with normalized sliding field `cos 2πx`.
///
/// Built on the sphere: on the torus the same field also makes `Σ₁` a full
/// escaping circle with its own pair of pseudo-equilibria.
pub fn cos_sliding() -> Scenario {
    let field = PiecewiseField::new(
        TrigField::new(cos1(1.0, 0.0), TrigComponent::constant(-1.0)),
        TrigField::constant(0.0, 1.0),
        ManifoldModel::Sphere,
    );
    Scenario::new("cos-sliding", field)
}

/// Sphere system whose `X⁻` normal `x − 1/2` has a single zero on `Σ₂`.
pub fn odd_fold() -> Scenario {
    let g = TrigComponent {
        c0: -0.5,
        poly: vec![1.0],
        ..Default::default()
    };
    let field = PiecewiseField::new(
        TrigField::constant(1.0, 1.0),
        TrigField::new(TrigComponent::constant(1.0), g),
        ManifoldModel::Sphere,
    );
    Scenario::new("odd-fold", field)
}

pub const SCENARIO_NAMES: &[&str] = &[
    "regular",
    "limit-cycle",
    "four-fold",
    "fold-regular",
    "chaotic-torus",
    "two-cycle-band",
    "chaotic-sphere",
    "fold-connection",
    "cos-sliding",
    "odd-fold",
];

fn get(params: &BTreeMap<String, f64>, k: &str, default: f64) -> f64 {
    params.get(k).copied().unwrap_or(default)
}

/// Build a scenario by name. Unknown parameter names are rejected.
pub fn by_name(name: &str, params: &BTreeMap<String, f64>, model: Option<ManifoldModel>) -> Result<Scenario> {
    let allowed: &[&str] = match name {
        "regular" => &["a", "b", "sigma1", "sigma2"],
        "limit-cycle" => &["eps"],
        "four-fold" => &["alpha"],
        "fold-regular" => &["alpha", "beta", "c0", "cos1", "sin1", "cos2", "sin2", "ysin1", "ycos1"],
        "fold-connection" => &["c"],
        "chaotic-torus" | "two-cycle-band" | "chaotic-sphere" | "cos-sliding" | "odd-fold" => &[],
        other => {
            return Err(Error::domain(format!(
                "unknown scenario {other:?}; known: {}",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::domain(format!("scenario {name} has no parameter {k:?}")));
    }
    let m = model.unwrap_or(ManifoldModel::Torus);
    let s = match name {
        "regular" => regular_normal_form(
            get(params, "a", 1.0),
            get(params, "b", 1.0),
            get(params, "sigma1", 1.0),
            get(params, "sigma2", 1.0),
            m,
        )?,
        "limit-cycle" => example_limit_cycle(get(params, "eps", 0.1))?,
        "four-fold" => four_fold_family(get(params, "alpha", 1.0)),
        "fold-regular" => {
            let g = TrigComponent {
                c0: get(params, "c0", 0.1),
                cos: vec![get(params, "cos1", 0.4), get(params, "cos2", 0.0)],
                sin: vec![get(params, "sin1", 0.0), get(params, "sin2", 0.0)],
                y_sin: vec![get(params, "ysin1", 0.0)],
                y_cos: vec![get(params, "ycos1", 0.0)],
                ..Default::default()
            };
            fold_regular_model(get(params, "alpha", 2.0), get(params, "beta", -1.0), g, m)?
        }
        "fold-connection" => fold_connection_family(get(params, "c", fold_connection_critical_c()))?,
        "chaotic-torus" => chaotic_torus(),
        "two-cycle-band" => two_cycle_band(),
        "chaotic-sphere" => chaotic_sphere(),
        "cos-sliding" => cos_sliding(),
        _ => odd_fold(),
    };
    if model.is_some() && s.field.model() != m && name != "chaotic-sphere" && name != "odd-fold" {
        let mut s = s;
        s.field = s.field.with_model(m);
        return Ok(s);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{find_tangencies, RegionLabel};
    use approx::assert_abs_diff_eq;

    #[test]
    fn limit_cycle_matches_closed_form() {
        for &eps in &[0.02, 0.1, 0.2] {
            let x1 = limit_cycle_landing(eps).unwrap();
            // tan(π/4 + u₁/2) = tan(π/4 + u₀/2)·e^π with u = 2πx
            let u0 = 2.0 * PI * (0.75 - eps);
            let u1 = 2.0 * ((PI / 4.0 + u0 / 2.0).tan() * PI.exp()).atan() - PI / 2.0;
            let oracle = (u1 / (2.0 * PI)).rem_euclid(1.0);
            assert_abs_diff_eq!(x1, oracle, epsilon = 1e-10);
        }
        let s = example_limit_cycle(0.1).unwrap();
        let alpha: f64 = s.params["alpha"].parse().unwrap();
        assert_abs_diff_eq!(alpha, 1.396_990_745_683_347_7, epsilon = 1e-9);
        // the lines x = 1/4, 3/4 are invariant for the upper field
        for x in [0.25, 0.75] {
            assert!(s.field.plus().eval(x, 0.8)[0].abs() < 1e-15);
        }
        assert!(example_limit_cycle(0.0).is_err());
        assert!(example_limit_cycle(0.25).is_err());
    }

    #[test]
    fn four_fold_folds_and_flag() {
        let s = four_fold_family(1.0);
        let t = find_tangencies(&s.field, SigmaId::Sigma2);
        let xs: Vec<f64> = t.iter().map(|t| t.location.x).collect();
        assert_eq!(xs.len(), 2);
        assert_abs_diff_eq!(xs[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[1], 0.75, epsilon = 1e-12);
        assert!(four_fold_family(0.0).is_degenerate());
        assert!(!s.is_degenerate());
    }

    #[test]
    fn presets_build_and_pass_sanity() {
        for name in SCENARIO_NAMES {
            let s = by_name(name, &BTreeMap::new(), None).unwrap();
            s.sanity_check().unwrap();
        }
        assert_eq!(chaotic_sphere().field.model(), ManifoldModel::Sphere);
        let mut p = BTreeMap::new();
        p.insert("nope".to_string(), 1.0);
        assert!(by_name("four-fold", &p, None).is_err());
        assert!(by_name("missing", &BTreeMap::new(), None).is_err());
    }

    #[test]
    fn fold_regular_checks() {
        assert!(fold_regular_model(1.0, -1.0, cos1(0.4, 0.1), ManifoldModel::Torus).is_err());
        assert!(fold_regular_model(2.0, 1.0, cos1(0.4, 0.1), ManifoldModel::Torus).is_err());
        let flat = fold_regular_model(2.0, -1.0, TrigComponent::constant(0.1), ManifoldModel::Torus).unwrap();
        assert!(find_tangencies(&flat.field, SigmaId::Sigma2).is_empty());
        let d = decompose_sigma(&flat.field, SigmaId::Sigma2);
        assert_eq!(d.intervals.len(), 1);
        // β < 0 with X₂⁻ > 0 makes all of Σ₂ stable sliding rather than crossing
        assert_eq!(d.intervals[0].label, RegionLabel::StableSliding);
        // sliding speed for α = 2 is +1 where the lower normal is positive
        let ct = chaotic_torus();
        assert_abs_diff_eq!(ct.field.normalized_sliding(SigmaId::Sigma2, 0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn critical_connection_value() {
        assert_abs_diff_eq!(fold_connection_critical_c(), -0.328_674_162_908_546_2, epsilon = 1e-12);
    }
}
