//! Root scanning for functions on the circle `[0,1)`.
//!
//! A function is sampled on a uniform grid, sign changes are bracketed and
//! bisected. Runs of near-zero samples are reported as flat segments and
//! sign changes that do not shrink under bisection as jumps.

use serde::{Deserialize, Serialize};

/// Samples at or below this magnitude count as zero for flat-run detection.
const FLAT_EPS: f64 = 1e-12;
/// A bracket whose end values still differ by more than this after full
/// bisection is treated as a discontinuity.
const JUMP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootKind {
    /// Transversal sign change.
    Simple,
    /// Zero without sign change (even multiplicity).
    Touch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleRoot {
    pub x: f64,
    pub kind: RootKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CircleScan {
    pub roots: Vec<CircleRoot>,
    /// Arcs `(start, end)` where the function vanishes identically on the grid.
    pub flat: Vec<(f64, f64)>,
    /// Abscissae of sign-changing jumps.
    pub jumps: Vec<f64>,
}

/// Bisect a sign change of `f` on `[a, b]` until the bracket is below `tol`.
/// Returns the final bracket.
pub fn bisect(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut fa = f(a);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return (m, m);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    (a, b)
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Scan `f` on the circle with `n` grid cells and refine roots to `tol`.
///
/// `f` is evaluated at canonical abscissae in `[0,1)` and at the left limit
/// `1⁻` (largest float below one), which lets a seam discontinuity at
/// `x = 0` show up as a jump rather than a root.
pub fn scan_circle(f: &dyn Fn(f64) -> f64, n: usize, tol: f64) -> CircleScan {
    let n = n.max(8);
    let one_minus = 1.0f64.next_down();
    let xs: Vec<f64> = (0..=n)
        .map(|i| if i == n { one_minus } else { i as f64 / n as f64 })
        .collect();
    let gs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut out = CircleScan::default();

    // flat runs
    let zero: Vec<bool> = gs[..n].iter().map(|g| g.abs() <= FLAT_EPS).collect();
    let all_zero = zero.iter().all(|&z| z);
    if all_zero {
        out.flat.push((0.0, 1.0));
        return out;
    }
    let mut in_flat = vec![false; n];
    // start scanning from a non-zero sample so that cyclic runs are not split
    let start = zero.iter().position(|&z| !z).unwrap_or(0);
    let mut i = 0;
    while i < n {
        let idx = (start + i) % n;
        if zero[idx] {
            let mut len = 0;
            while len < n && zero[(idx + len) % n] {
                len += 1;
            }
            if len >= 3 {
                for k in 0..len {
                    in_flat[(idx + k) % n] = true;
                }
                let a = xs[idx];
                let b = a + len.saturating_sub(1) as f64 / n as f64;
                out.flat.push((a, b));
            }
            i += len;
        } else {
            i += 1;
        }
    }

    let g_at = |i: usize| -> f64 { gs[i % n] };
    for i in 0..n {
        if in_flat[i] {
            continue;
        }
        let gi = gs[i];
        if gi == 0.0 {
            let prev = g_at(i + n - 1);
            let next = gs[i + 1];
            let kind = if sign(prev) * sign(next) < 0 {
                RootKind::Simple
            } else {
                RootKind::Touch
            };
            out.roots.push(CircleRoot { x: xs[i], kind });
            continue;
        }
        let (a, b) = (xs[i], xs[i + 1]);
        let gb = gs[i + 1];
        if gb == 0.0 {
            continue;
        }
        if sign(gi) * sign(gb) < 0 {
            let (lo, hi) = bisect(f, a, b, tol);
            let (flo, fhi) = (f(lo), f(hi));
            if (flo - fhi).abs() > JUMP_EPS {
                out.jumps.push(0.5 * (lo + hi));
            } else {
                let x = 0.5 * (lo + hi);
                out.roots.push(CircleRoot {
                    x: if x >= 1.0 { 0.0 } else { x },
                    kind: RootKind::Simple,
                });
            }
        }
    }
    // seam: left limit at 1⁻ against the value at 0
    let (g_end, g0) = (gs[n], gs[0]);
    if g0 != 0.0 && g_end != 0.0 && sign(g_end) * sign(g0) < 0 {
        out.jumps.push(0.0);
    }
    // touch roots: near-zero local minima of |f| between grid points
    for i in 0..n {
        if in_flat[i] {
            continue;
        }
        let (gp, gi, gn) = (g_at(i + n - 1), gs[i], gs[i + 1]);
        if gi == 0.0 || sign(gp) != sign(gi) || sign(gi) != sign(gn) {
            continue;
        }
        if gi.abs() <= gp.abs() && gi.abs() < gn.abs() && gi.abs() < 1e-6 {
            let lo = xs[i] - 1.0 / n as f64;
            let hi = xs[i] + 1.0 / n as f64;
            let (xm, fm) = golden_min_abs(f, lo, hi, tol);
            if fm < 1e-9 {
                out.roots.push(CircleRoot {
                    x: crate::manifold::unit_mod(xm),
                    kind: RootKind::Touch,
                });
            }
        }
    }
    out.roots.sort_by(|a, b| a.x.total_cmp(&b.x));
    out.roots.dedup_by(|a, b| (a.x - b.x).abs() <= 10.0 * tol);
    out.jumps.sort_by(f64::total_cmp);
    out
}

fn golden_min_abs(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let wrap = |x: f64| crate::manifold::unit_mod(x);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(wrap(c)).abs();
    let mut fd = f(wrap(d)).abs();
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(wrap(c)).abs();
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(wrap(d)).abs();
        }
    }
    let x = 0.5 * (a + b);
    (x, f(wrap(x)).abs())
}

/// Roots of `f` on a bounded interval `[a, b]` by grid bracketing.
pub fn scan_interval(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize, tol: f64) -> Vec<f64> {
    let n = n.max(2);
    let mut roots = Vec::new();
    let xs: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    let gs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    for i in 0..n {
        if gs[i] == 0.0 {
            roots.push(xs[i]);
            continue;
        }
        if gs[i + 1] != 0.0 && (gs[i] > 0.0) != (gs[i + 1] > 0.0) {
            let (lo, hi) = bisect(f, xs[i], xs[i + 1], tol);
            roots.push(0.5 * (lo + hi));
        }
    }
    if gs[n] == 0.0 {
        roots.push(xs[n]);
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cosine_roots() {
        let s = scan_circle(&|x| (2.0 * PI * x).cos(), 2048, 1e-12);
        assert_eq!(s.roots.len(), 2);
        assert!((s.roots[0].x - 0.25).abs() < 1e-12);
        assert!((s.roots[1].x - 0.75).abs() < 1e-12);
        assert!(s.jumps.is_empty() && s.flat.is_empty());
    }

    #[test]
    fn sine_root_at_origin() {
        let s = scan_circle(&|x| (2.0 * PI * x).sin(), 2048, 1e-12);
        let xs: Vec<f64> = s.roots.iter().map(|r| r.x).collect();
        assert_eq!(xs.len(), 2, "{xs:?}");
        assert!(xs[0].abs() < 1e-12);
        assert!((xs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn seam_jump_is_not_a_root() {
        let s = scan_circle(&|x| x - 0.5, 2048, 1e-12);
        assert_eq!(s.roots.len(), 1);
        assert_eq!(s.jumps, vec![0.0]);
    }

    #[test]
    fn interior_jump() {
        let s = scan_circle(&|x| if x < 0.3 { -1.0 } else { 1.0 }, 2048, 1e-12);
        assert!(s.roots.is_empty());
        assert_eq!(s.jumps.len(), 2);
    }

    #[test]
    fn flat_and_touch() {
        let s = scan_circle(&|_| 0.0, 256, 1e-12);
        assert_eq!(s.flat, vec![(0.0, 1.0)]);
        let s = scan_circle(&|x| if (0.2..0.4).contains(&x) { 0.0 } else { 1.0 }, 256, 1e-12);
        assert_eq!(s.flat.len(), 1);
        assert!(s.roots.is_empty());
        let s = scan_circle(&|x| (x - 0.3001).powi(2), 2048, 1e-12);
        assert_eq!(s.roots.len(), 1);
        assert_eq!(s.roots[0].kind, RootKind::Touch);
        assert!((s.roots[0].x - 0.3001).abs() < 1e-4);
    }

    #[test]
    fn interval_scan() {
        let r = scan_interval(&|x| x * x - 2.0, 0.0, 2.0, 64, 1e-14);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 2f64.sqrt()).abs() < 1e-13);
    }
}
