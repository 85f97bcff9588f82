//! Dormand–Prince 5(4) embedded Runge–Kutta steps for autonomous systems.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order weights minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        out[i] += h * s;
    }
    out
}

/// One step of size `h` from `y`. Returns the fifth-order solution and the
/// embedded error estimate vector.
pub(crate) fn dopri_step<const N: usize>(
    f: &dyn Fn(&[f64; N]) -> [f64; N],
    y: &[f64; N],
    h: f64,
) -> ([f64; N], [f64; N]) {
    let k1 = f(y);
    let k2 = f(&axpy(y, h, &[(A21, &k1)]));
    let k3 = f(&axpy(y, h, &[(A31, &k1), (A32, &k2)]));
    let k4 = f(&axpy(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(&axpy(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f(&axpy(
        y,
        h,
        &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
    ));
    let y5 = axpy(y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(&y5);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y5, err)
}

pub(crate) fn error_norm<const N: usize>(
    y0: &[f64; N],
    y1: &[f64; N],
    err: &[f64; N],
    rel: f64,
    abs: f64,
) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..N {
        let sc = abs + rel * y0[i].abs().max(y1[i].abs());
        m = m.max(err[i].abs() / sc);
    }
    m
}

/// Step-size factor from a normalized error.
pub(crate) fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        5.0
    } else {
        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
    }
}


/// Tolerances for [`flow_smooth`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct SmoothOpts {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub t_max: f64,
    pub event_tol: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum SmoothStop<const N: usize> {
    Event { which: usize, t: f64, y: [f64; N] },
    TimeLimit { t: f64, y: [f64; N] },
    Failure { t: f64, y: [f64; N] },
}

/// Integrate a smooth autonomous system until one of `K` event functions
/// goes from positive to non-positive. An event function that starts within
/// `1e-9` of zero is armed only once it has exceeded that margin.
pub(crate) fn flow_smooth<const N: usize, const K: usize>(
    rhs: &dyn Fn(&[f64; N]) -> [f64; N],
    y0: [f64; N],
    opts: &SmoothOpts,
    events: &dyn Fn(&[f64; N]) -> [f64; K],
    on_step: &mut dyn FnMut(f64, &[f64; N]),
) -> SmoothStop<N> {
    const MARGIN: f64 = 1e-9;
    let mut armed = events(&y0).map(|g| g > MARGIN);
    let mut y = y0;
    let mut t = 0.0;
    let mut h = opts.max_step.min(0.01);
    loop {
        let remaining = opts.t_max - t;
        if remaining <= 0.0 {
            return SmoothStop::TimeLimit { t, y };
        }
        let step = h.min(opts.max_step).min(remaining);
        let (y1, err) = dopri_step(rhs, &y, step);
        let en = error_norm(&y, &y1, &err, opts.rel_tol, opts.abs_tol);
        if !(en <= 1.0) {
            h = step * step_factor(en).min(1.0);
            if h < 1e-14 || !en.is_finite() {
                return SmoothStop::Failure { t, y };
            }
            continue;
        }
        let fired = |s: &[f64; N]| -> Option<usize> {
            let g = events(s);
            (0..K).find(|&i| if armed[i] { g[i] <= 0.0 } else { g[i] < -MARGIN })
        };
        if fired(&y1).is_none() {
            t += step;
            y = y1;
            for (a, g) in armed.iter_mut().zip(events(&y)) {
                if g > MARGIN {
                    *a = true;
                }
            }
            on_step(t, &y);
            h = step * step_factor(en);
            continue;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut s_hi = y1;
        while (hi - lo) * step > 0.5 * opts.event_tol && hi - lo > 1e-18 {
            let mid = 0.5 * (lo + hi);
            let sm = dopri_step(rhs, &y, mid * step).0;
            if fired(&sm).is_some() {
                hi = mid;
                s_hi = sm;
            } else {
                lo = mid;
            }
        }
        let which = fired(&s_hi).expect("event at bracket end");
        t += hi * step;
        on_step(t, &s_hi);
        return SmoothStop::Event { which, t, y: s_hi };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_accuracy() {
        let f = |y: &[f64; 1]| [-y[0]];
        let mut y = [1.0];
        let h = 0.1;
        for _ in 0..10 {
            y = dopri_step(&f, &y, h).0;
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn error_estimate_scales_as_h5() {
        let f = |y: &[f64; 1]| [y[0] * y[0]];
        let e1 = dopri_step(&f, &[1.0], 0.2).1[0].abs();
        let e2 = dopri_step(&f, &[1.0], 0.1).1[0].abs();
        let ratio = e1 / e2;
        assert!(ratio > 20.0 && ratio < 45.0, "{ratio}");
    }

    #[test]
    fn smooth_flow_event_location() {
        let opts = SmoothOpts { rel_tol: 1e-12, abs_tol: 1e-14, max_step: 0.05, t_max: 10.0, event_tol: 1e-13 };
        // y' = 1 starting at 0: event y = 0.7 at t = 0.7; the y = 0 event starts unarmed
        let r = flow_smooth(&|_: &[f64; 1]| [1.0], [0.0], &opts, &|y: &[f64; 1]| [0.7 - y[0], y[0]], &mut |_, _| {});
        match r {
            SmoothStop::Event { which, t, y } => {
                assert_eq!(which, 0);
                assert!((t - 0.7).abs() < 1e-12 && (y[0] - 0.7).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }
}
