//! Quotient-square models of T² and S².
//!
//! Points are stored as canonical representatives of their class in the unit
//! square. On the torus both coordinates live in `[0,1)`. On the sphere the
//! vertical sides are glued (`x` in `[0,1)`) and the horizontal sides collapse
//! to the poles `p_S` (`y = 0`) and `p_N` (`y = 1`), which are stored with
//! `x = 0`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Any `|y|` or `|1 - y|` below this is snapped to a pole on the sphere.
pub const POLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldModel {
    Torus,
    Sphere,
}

impl fmt::Display for ManifoldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifoldModel::Torus => f.write_str("torus"),
            ManifoldModel::Sphere => f.write_str("sphere"),
        }
    }
}

impl std::str::FromStr for ManifoldModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "torus" | "t2" => Ok(ManifoldModel::Torus),
            "sphere" | "s2" => Ok(ManifoldModel::Sphere),
            other => Err(Error::domain(format!("unknown manifold model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pole {
    North,
    South,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoleStatus {
    pub at_pole: bool,
    pub which: Option<Pole>,
}

/// Canonical representative of a point of the quotient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientPoint {
    pub x: f64,
    pub y: f64,
    pub model: ManifoldModel,
}

impl QuotientPoint {
    pub fn pole_status(&self) -> PoleStatus {
        let which = match self.model {
            ManifoldModel::Torus => None,
            ManifoldModel::Sphere if self.y == 0.0 => Some(Pole::South),
            ManifoldModel::Sphere if self.y == 1.0 => Some(Pole::North),
            ManifoldModel::Sphere => None,
        };
        PoleStatus {
            at_pole: which.is_some(),
            which,
        }
    }

    pub fn is_pole(&self) -> bool {
        self.pole_status().at_pole
    }

    pub fn north_pole() -> Self {
        QuotientPoint {
            x: 0.0,
            y: 1.0,
            model: ManifoldModel::Sphere,
        }
    }

    pub fn south_pole() -> Self {
        QuotientPoint {
            x: 0.0,
            y: 0.0,
            model: ManifoldModel::Sphere,
        }
    }
}

/// Reduce to `[0,1)`, guarding against `rem_euclid` rounding up to 1.
pub(crate) fn unit_mod(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Canonical representative of `(raw_x, raw_y)`.
///
/// On the sphere a raw `y` outside `[0,1]` is continued over the pole, i.e.
/// `(x, -s)` is the point `(x + 1/2, s)`.
pub fn wrap(raw_x: f64, raw_y: f64, model: ManifoldModel) -> Result<QuotientPoint> {
    if !raw_x.is_finite() || !raw_y.is_finite() {
        return Err(Error::domain(format!(
            "non-finite coordinates ({raw_x}, {raw_y})"
        )));
    }
    match model {
        ManifoldModel::Torus => Ok(QuotientPoint {
            x: unit_mod(raw_x),
            y: unit_mod(raw_y),
            model,
        }),
        ManifoldModel::Sphere => {
            // each integer level crossed is one pole passage, which flips x by 1/2
            let k = raw_y.floor();
            let odd = k.rem_euclid(2.0) == 1.0;
            let (x, y) = if odd {
                (raw_x + 0.5, k + 1.0 - raw_y)
            } else {
                (raw_x, raw_y - k)
            };
            if y < POLE_TOL {
                return Ok(QuotientPoint::south_pole());
            }
            if 1.0 - y < POLE_TOL {
                return Ok(QuotientPoint::north_pole());
            }
            Ok(QuotientPoint {
                x: unit_mod(x),
                y,
                model,
            })
        }
    }
}

fn circle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Quotient metric: minimal Euclidean distance over representatives.
///
/// On the sphere paths may run through a collapsed pole, so the distance is
/// the smaller of the cylinder distance and the two routes over `p_S`, `p_N`.
pub fn quotient_distance(p: &QuotientPoint, q: &QuotientPoint) -> Result<f64> {
    if p.model != q.model {
        return Err(Error::ModelMismatch(p.model, q.model));
    }
    let dx = circle_gap(p.x, q.x);
    match p.model {
        ManifoldModel::Torus => {
            let dy = circle_gap(p.y, q.y);
            Ok(dx.hypot(dy))
        }
        ManifoldModel::Sphere => {
            let dx = if p.is_pole() || q.is_pole() { 0.0 } else { dx };
            let direct = dx.hypot(p.y - q.y);
            let via_south = p.y + q.y;
            let via_north = (1.0 - p.y) + (1.0 - q.y);
            Ok(direct.min(via_south).min(via_north))
        }
    }
}

/// Supremum of [`quotient_distance`] over the manifold.
///
/// Torus: attained at offset `(1/2, 1/2)`. Sphere: attained pole to pole.
pub fn manifold_diameter(model: ManifoldModel) -> f64 {
    match model {
        ManifoldModel::Torus => std::f64::consts::FRAC_1_SQRT_2,
        ManifoldModel::Sphere => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        let p = wrap(1.25, -0.5, ManifoldModel::Torus).unwrap();
        assert_eq!((p.x, p.y), (0.25, 0.5));
        let p = wrap(0.3, 0.7, ManifoldModel::Torus).unwrap();
        assert_eq!((p.x, p.y), (0.3, 0.7));
        let p = wrap(0.9, 1.0, ManifoldModel::Sphere).unwrap();
        assert_eq!(p, QuotientPoint::north_pole());
        assert_eq!(p.pole_status().which, Some(Pole::North));
        let s = wrap(0.4, 3e-10, ManifoldModel::Sphere).unwrap();
        assert_eq!(s, QuotientPoint::south_pole());
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(wrap(f64::NAN, 0.1, ManifoldModel::Torus).is_err());
        assert!(wrap(0.1, f64::INFINITY, ManifoldModel::Sphere).is_err());
    }

    #[test]
    fn wrap_tiny_negative_stays_half_open() {
        let p = wrap(-1e-18, 0.2, ManifoldModel::Torus).unwrap();
        assert!(p.x >= 0.0 && p.x < 1.0);
    }

    #[test]
    fn sphere_continues_over_pole() {
        let p = wrap(0.1, -0.2, ManifoldModel::Sphere).unwrap();
        assert_abs_diff_eq!(p.x, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 0.2, epsilon = 1e-15);
        let q = wrap(0.1, 1.3, ManifoldModel::Sphere).unwrap();
        assert_abs_diff_eq!(q.x, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn distance_examples() {
        let t = ManifoldModel::Torus;
        let a = wrap(0.95, 0.5, t).unwrap();
        let b = wrap(0.05, 0.5, t).unwrap();
        assert_abs_diff_eq!(quotient_distance(&a, &b).unwrap(), 0.1, epsilon = 1e-12);
        assert_eq!(quotient_distance(&a, &a).unwrap(), 0.0);
        let s = wrap(0.2, 0.3, ManifoldModel::Sphere).unwrap();
        assert!(matches!(
            quotient_distance(&a, &s),
            Err(Error::ModelMismatch(..))
        ));
    }

    /// Brute-force grid maximization of the quotient distance; the second
    /// point ranges over a grid while the first is fixed (torus is homogeneous)
    /// or also ranges (sphere).
    #[test]
    fn diameter_matches_grid_oracle() {
        let n = 200;
        let origin = wrap(0.0, 0.0, ManifoldModel::Torus).unwrap();
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let q = wrap(i as f64 / n as f64, j as f64 / n as f64, ManifoldModel::Torus)
                    .unwrap();
                best = best.max(quotient_distance(&origin, &q).unwrap());
            }
        }
        assert_abs_diff_eq!(best, manifold_diameter(ManifoldModel::Torus), epsilon = 1e-12);

        let m = 40;
        let pts: Vec<_> = (0..m)
            .flat_map(|i| {
                (0..=m).map(move |j| {
                    wrap(i as f64 / m as f64, j as f64 / m as f64, ManifoldModel::Sphere).unwrap()
                })
            })
            .collect();
        let mut best: f64 = 0.0;
        for p in &pts {
            for q in &pts {
                best = best.max(quotient_distance(p, q).unwrap());
            }
        }
        assert_abs_diff_eq!(best, manifold_diameter(ManifoldModel::Sphere), epsilon = 1e-3);
    }

    #[test]
    fn north_pole_distance_independent_of_x() {
        let n = QuotientPoint::north_pole();
        let eps = 1e-3;
        let d0 = quotient_distance(&n, &wrap(0.0, 1.0 - eps, ManifoldModel::Sphere).unwrap())
            .unwrap();
        for k in 1..20 {
            let q = wrap(k as f64 / 20.0, 1.0 - eps, ManifoldModel::Sphere).unwrap();
            assert_abs_diff_eq!(quotient_distance(&n, &q).unwrap(), d0, epsilon = 1e-12);
        }
    }

    fn model_strategy() -> impl Strategy<Value = ManifoldModel> {
        prop_oneof![Just(ManifoldModel::Torus), Just(ManifoldModel::Sphere)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn wrap_idempotent(x in -5.0f64..5.0, y in -5.0f64..5.0, model in model_strategy()) {
            let p = wrap(x, y, model).unwrap();
            let q = wrap(p.x, p.y, model).unwrap();
            prop_assert_eq!(p.x.to_bits(), q.x.to_bits());
            prop_assert_eq!(p.y.to_bits(), q.y.to_bits());
            prop_assert!(p.x >= 0.0 && p.x < 1.0);
            prop_assert_eq!(quotient_distance(&p, &q).unwrap(), 0.0);
        }

        #[test]
        fn metric_axioms(
            a in (0.0f64..1.0, 0.0f64..1.0),
            b in (0.0f64..1.0, 0.0f64..1.0),
            c in (0.0f64..1.0, 0.0f64..1.0),
            model in model_strategy(),
        ) {
            let p = wrap(a.0, a.1, model).unwrap();
            let q = wrap(b.0, b.1, model).unwrap();
            let r = wrap(c.0, c.1, model).unwrap();
            let pq = quotient_distance(&p, &q).unwrap();
            let qp = quotient_distance(&q, &p).unwrap();
            let pr = quotient_distance(&p, &r).unwrap();
            let rq = quotient_distance(&r, &q).unwrap();
            prop_assert!((pq - qp).abs() <= 1e-12);
            prop_assert!(pq <= pr + rq + 1e-12);
            prop_assert!(pq <= manifold_diameter(model) + 1e-12);
        }
    }
}
