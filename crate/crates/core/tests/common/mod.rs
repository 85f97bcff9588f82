//! Fixed-step RK4 reference for Filippov flows on the torus.
//!
//! Fields are evaluated from their own formulas here, not through the crate,
//! and events are located by bisecting the RK4 step length from the step
//! start.

#![allow(dead_code)]

use std::f64::consts::PI;

/// `X = (u + a·cos 2πx, v + b·cos 2πx + c·sin 2πx)`.
#[derive(Debug, Clone, Copy)]
pub struct Simple {
    pub u: f64,
    pub a: f64,
    pub v: f64,
    pub b: f64,
    pub c: f64,
}

impl Simple {
    pub fn eval(&self, x: f64) -> [f64; 2] {
        let (s, co) = (2.0 * PI * x).sin_cos();
        [self.u + self.a * co, self.v + self.b * co + self.c * s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    Cross,
    EnterSliding,
    ExitFold,
}

#[derive(Debug, Clone, Copy)]
pub struct RefEvent {
    pub kind: RefKind,
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

#[derive(Clone, Copy)]
enum Mode {
    /// In the strip `[k/2, (k+1)/2]` of the lifted plane.
    Smooth(i64),
    /// Sliding on the level `k/2`.
    Sliding(i64),
}

pub struct Reference {
    pub plus: Simple,
    pub minus: Simple,
    pub dt: f64,
}

fn rk4(f: &dyn Fn([f64; 2]) -> [f64; 2], p: [f64; 2], h: f64) -> [f64; 2] {
    let add = |p: [f64; 2], k: [f64; 2], s: f64| [p[0] + s * k[0], p[1] + s * k[1]];
    let k1 = f(p);
    let k2 = f(add(p, k1, h / 2.0));
    let k3 = f(add(p, k2, h / 2.0));
    let k4 = f(add(p, k3, h));
    [
        p[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Smallest `s ∈ (0, h]` with `g(step(s)) ≤ 0`, given `g > 0` at `s = 0`.
fn first_zero(step: &dyn Fn(f64) -> [f64; 2], g: &dyn Fn([f64; 2]) -> f64, h: f64) -> f64 {
    let (mut a, mut b) = (0.0, h);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if g(step(m)) > 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-15 {
            break;
        }
    }
    b
}

impl Reference {
    /// Field below and above the level `k/2`.
    fn around(&self, k: i64) -> (Simple, Simple) {
        if k.rem_euclid(2) == 0 {
            (self.plus, self.minus)
        } else {
            (self.minus, self.plus)
        }
    }

    fn strip_field(&self, k: i64) -> Simple {
        if k.rem_euclid(2) == 0 {
            self.minus
        } else {
            self.plus
        }
    }

    fn sliding_speed(&self, k: i64, x: f64) -> f64 {
        let (below, above) = self.around(k);
        let (b, a) = (below.eval(x), above.eval(x));
        (a[1] * b[0] - b[1] * a[0]) / (a[1] - b[1])
    }

    pub fn run(&self, x0: f64, y0: f64, t_max: f64) -> Vec<RefEvent> {
        let mut events = Vec::new();
        let mut t = 0.0;
        let mut p = [x0, y0];
        let mut mode = Mode::Smooth((2.0 * y0).floor() as i64);
        let push = |events: &mut Vec<RefEvent>, kind, p: [f64; 2], t| {
            events.push(RefEvent {
                kind,
                x: p[0].rem_euclid(1.0),
                y: (p[1].rem_euclid(1.0) * 2.0).round() / 2.0 % 1.0,
                t,
            })
        };
        while t < t_max {
            let h = self.dt.min(t_max - t);
            match mode {
                Mode::Smooth(k) => {
                    let f = self.strip_field(k);
                    let rhs = move |q: [f64; 2]| f.eval(q[0]);
                    let next = rk4(&rhs, p, h);
                    let (lo, hi) = (k as f64 / 2.0, (k + 1) as f64 / 2.0);
                    if next[1] > lo && next[1] < hi {
                        p = next;
                        t += h;
                        continue;
                    }
                    let up = next[1] >= hi;
                    let level = if up { hi } else { lo };
                    let start = p;
                    let step = |s: f64| rk4(&rhs, start, s);
                    let g = |q: [f64; 2]| if up { level - q[1] } else { q[1] - level };
                    let s = first_zero(&step, &g, h);
                    p = [step(s)[0], level];
                    t += s;
                    let lk = if up { k + 1 } else { k };
                    let (below, above) = self.around(lk);
                    let (vb, va) = (below.eval(p[0])[1], above.eval(p[0])[1]);
                    if vb > 0.0 && va < 0.0 {
                        push(&mut events, RefKind::EnterSliding, p, t);
                        mode = Mode::Sliding(lk);
                    } else {
                        push(&mut events, RefKind::Cross, p, t);
                        mode = Mode::Smooth(if up { k + 1 } else { k - 1 });
                    }
                }
                Mode::Sliding(k) => {
                    let rhs = move |q: [f64; 2]| [self.sliding_speed(k, q[0]), 0.0];
                    let (below, above) = self.around(k);
                    let g = |q: [f64; 2]| below.eval(q[0])[1].min(-above.eval(q[0])[1]);
                    let next = rk4(&rhs, p, h);
                    if g(next) > 0.0 {
                        p = next;
                        t += h;
                        continue;
                    }
                    let start = p;
                    let step = |s: f64| rk4(&rhs, start, s);
                    let s = first_zero(&step, &g, h);
                    p = step(s);
                    t += s;
                    push(&mut events, RefKind::ExitFold, p, t);
                    // leave toward the field that stopped pushing into the level
                    let into_below = below.eval(p[0])[1] <= 0.0;
                    mode = Mode::Smooth(if into_below { k - 1 } else { k });
                    let nudge: f64 = if into_below { -1.0 } else { 1.0 };
                    let f = if into_below { below } else { above };
                    // step off the level along the departing field's curvature
                    let rhs2 = move |q: [f64; 2]| f.eval(q[0]);
                    let mut q = p;
                    let mut tt = 0.0;
                    while (q[1] - p[1]) * nudge.signum() <= 0.0 && tt < 1e-3 {
                        q = rk4(&rhs2, q, 1e-5);
                        tt += 1e-5;
                    }
                    p = q;
                    t += tt;
                }
            }
        }
        events
    }
}
