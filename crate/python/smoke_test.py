"""Smoke test for the `filippov` Python module.

Build and install first:  pip install --no-build-isolation -e crates/py
"""
import math

import filippov


def main():
    assert "chaotic-torus" in filippov.scenario_names()

    x, y = filippov.wrap(1.25, -0.25)
    assert abs(x - 0.25) < 1e-12 and abs(y - 0.75) < 1e-12
    assert abs(filippov.diameter("torus") - math.sqrt(2) / 2) < 1e-12

    r = filippov.periodicity_test("1/3", "1/3", "1", "1")
    assert r["Periodic"]["n0"] == 6, r
    v = filippov.classify_regular("1", "1", "1", "1")
    assert v["verdict"]["verdict"] == "PeriodicFoliation", v

    reg = filippov.Field.scenario("regular", {"a": 1, "b": 1, "sigma1": 1, "sigma2": 1})
    traj = reg.simulate(0.1, 0.25, options={"t_max": 3.0})
    kinds = {e["kind"] for e in traj.events}
    assert "CrossSigma" in kinds, kinds
    assert len(traj) > 0 and traj.to_csv().startswith("t,x,y")

    sphere = filippov.Field.scenario("regular", {"a": 1, "b": 1, "sigma1": 1, "sigma2": 1}, model="sphere")
    end = sphere.simulate(0.1, 0.25, options={"t_max": 10.0}).terminal_event
    assert end["kind"] == "HitPole" and end["detail"] == "north", end

    torus = filippov.Field.scenario("chaotic-torus")
    folds = torus.tangencies("sigma2")
    assert len(folds) == 2, folds
    p = torus.p_star()
    print("p* =", p["p_star"]["x"], "q* =", p["q_star"]["coord"])
    dec = torus.decompose("sigma2")
    assert dec["intervals"], dec

    band = filippov.Field.scenario("two-cycle-band")
    report = band.classify()
    assert report["verdict"]["verdict"] == "MinimalBands", report["verdict"]
    try:
        band.chaos_check(samples=10)
    except filippov.RefusedError:
        pass
    else:
        raise AssertionError("chaos_check should refuse a two-cycle band")

    inline = filippov.Field.trig(
        {"v1": {"c0": 2.0}, "v2": {"c0": -1.0}},
        {"v1": {"c0": 1.0}, "v2": {"c0": 0.1, "cos": [0.4]}},
    )
    assert inline.label("sigma2", 0.0) in ("Crossing", "StableSliding", "UnstableSliding", "Tangency")

    c = filippov.fold_connection_critical_c()
    assert abs(math.sqrt(1 - c * c) - c * math.acos(c) - math.pi / 2) < 1e-12
    print("ok")


if __name__ == "__main__":
    main()
