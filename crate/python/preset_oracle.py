"""Independent oracle for the shipped presets.

Recomputes fold locations, p*, q*, the half-return displacement and the
limit-cycle construction with scipy, and writes the numbers the Rust tests
compare against to crates/core/data/preset_oracle.json.

    python3 python/preset_oracle.py
"""

import json
import math
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi
OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "data" / "preset_oracle.json"


def chaotic_minus(x, y):
    return 1.0, 0.4 * math.cos(TWO_PI * x) + 0.1


def two_cycle_minus(x, y):
    return 1.0, 0.3 * math.cos(TWO_PI * x) + 0.2 * (math.sin(TWO_PI * y) - math.cos(0.2 * math.pi))


def half_return(field, xi):
    """X⁻ orbit from (0, xi) until x = 1; None if it leaves 0 < y < 1/2 first."""

    def rhs(t, s):
        return field(s[0], s[1])

    def hit_x(t, s):
        return s[0] - 1.0

    hit_x.terminal = True
    hit_x.direction = 1

    def top(t, s):
        return 0.5 - s[1]

    top.terminal = True

    def bottom(t, s):
        return s[1]

    bottom.terminal = True

    sol = solve_ivp(rhs, (0.0, 50.0), [0.0, xi], events=[hit_x, top, bottom], rtol=1e-12, atol=1e-14)
    if sol.t_events[0].size:
        return float(sol.y_events[0][0][1]) - xi, float(sol.t_events[0][0])
    return None


def chaotic_torus():
    xf = math.acos(-0.25) / TWO_PI
    folds = sorted([xf, 1.0 - xf])
    # second Lie derivative of X⁻ at the folds: X₁⁻ · d/dx X₂⁻
    lie2 = [-0.4 * TWO_PI * math.sin(TWO_PI * x) for x in folds]
    visible = [x for x, l in zip(folds, lie2) if l < 0]
    p_star = visible[0]
    # backward graph y(x) through (p*, 1/2) down to x = 0
    sol = solve_ivp(lambda x, y: [chaotic_minus(x, y[0])[1]], (p_star, 0.0), [0.5], rtol=1e-13, atol=1e-15)
    q_star = float(sol.y[0][-1])
    grid = np.linspace(0.01, 0.49, 49)
    ds = [half_return(chaotic_minus, float(xi)) for xi in grid]
    covered = [(float(xi), d[0]) for xi, d in zip(grid, ds) if d is not None]
    return {
        "folds": folds,
        "second_lie": lie2,
        "p_star_x": p_star,
        "q_star": q_star,
        "displacement_samples": covered,
    }


def two_cycle_band():
    def d(xi):
        r = half_return(two_cycle_minus, xi)
        return None if r is None else r[0]

    grid = np.linspace(0.02, 0.48, 93)
    vals = [d(float(g)) for g in grid]
    roots = []
    for a, b, da, db in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if da is not None and db is not None and da * db < 0:
            r = brentq(d, float(a), float(b), xtol=1e-12)
            h = 1e-6
            slope = (d(r + h) - d(r - h)) / (2 * h)
            roots.append({"xi": r, "d_prime": slope})
    return {"roots": roots}


def limit_cycle(eps):
    # upper flow of (cos 2πx, 1) from (3/4 − ε, 1/2) to y = 1, closed form
    u0 = TWO_PI * (0.75 - eps)
    u1 = 2.0 * math.atan(math.tan(math.pi / 4 + u0 / 2) * math.exp(math.pi)) - math.pi / 2
    x1 = (u1 / TWO_PI) % 1.0
    sol = solve_ivp(lambda y, x: [math.cos(TWO_PI * x[0])], (0.5, 1.0), [0.75 - eps], rtol=1e-13, atol=1e-15)
    x1_num = float(sol.y[0][-1])
    alpha = 0.5 / (0.75 - eps - x1)
    return {"eps": eps, "x1": x1, "x1_numeric": x1_num, "alpha": alpha}


def fold_connection_c():
    # orbit of X⁻ = (1, c − cos 2πx) from the visible fold on y = 1/2 touches y = 0
    # at the next fold when sqrt(1 − c²) − c·arccos(c) = π/2
    return brentq(lambda c: math.sqrt(1 - c * c) - c * math.acos(c) - math.pi / 2, -0.99, 0.0, xtol=1e-14)


def main():
    data = {
        "chaotic_torus": chaotic_torus(),
        "two_cycle_band": two_cycle_band(),
        "limit_cycle": limit_cycle(0.1),
        "fold_connection_c": fold_connection_c(),
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=2) + "\n")
    print(json.dumps({k: v for k, v in data.items() if k != "chaotic_torus"}, indent=2))
    ct = data["chaotic_torus"]
    print("p* =", ct["p_star_x"], "q* =", ct["q_star"], "d range =",
          min(d for _, d in ct["displacement_samples"]), max(d for _, d in ct["displacement_samples"]))


if __name__ == "__main__":
    main()
