"""Smoke test for the loadrank_py extension.

Build and install first:
    pip install --no-build-isolation -e crates/py
"""

import json
import math

import loadrank_py as lr


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    # Comfort is 1 at the desired temperature and symmetric around it.
    assert close(lr.comfort_hvac(22.0, 22.0, 3.0, 10.0), 1.0)
    assert close(lr.comfort_hvac(25.0, 22.0, 3.0, 10.0), lr.comfort_hvac(19.0, 22.0, 3.0, 10.0))
    assert close(lr.comfort_light(175.0, 700.0), 0.5)
    assert close(lr.curtailment_score(1000.0, 10.0, 1000.0, 10.0), 1.0)
    assert close(lr.curtailment_score(10.0, 10.0, 1000.0, 10.0), 0.1)

    # Strict dominance A > B > C on both criteria.
    scores = [
        [[(1.0, 1.0)], [(1.0, 1.0)]],
        [[(0.5, 1.0)], [(0.5, 1.0)]],
        [[(0.0, 1.0)], [(0.0, 1.0)]],
    ]
    res = lr.rank(scores, (0.6, 0.4), 0.75)
    assert res["order"] == [0, 1, 2], res
    assert all(close(f, e) for f, e in zip(res["fitness"], [1.0, 0.5, 0.0]))

    noisy = [
        [[(0.2, 0.5), (0.9, 0.5)], [(0.4, 1.0)]],
        [[(0.5, 1.0)], [(0.1, 0.3), (0.7, 0.7)]],
        [[(0.3, 0.25), (0.6, 0.75)], [(0.5, 0.5), (0.25, 0.5)]],
    ]
    a = lr.rank(noisy)
    b = lr.brute_force_rank(noisy)
    assert max(abs(x - y) for x, y in zip(a["fitness"], b["fitness"])) < 1e-9

    try:
        lr.rank(scores, (0.7, 0.4), 0.75)
    except ValueError:
        pass
    else:
        raise AssertionError("unnormalized weights accepted")

    building = lr.Building.office(1)
    assert len(building.zone_ids()) == 5
    assert len(building.alternatives()) == 5 * 16
    assert lr.Building(building.to_json()).zone_ids() == building.zone_ids()

    trainer = lr.Emulator(building, seed=7, dt_s=300)
    log = trainer.training_log(7, 8)
    assert len(log) == 7 * 288 + 1
    assert log.to_csv().startswith("timestamp,chiller_power_W")
    models = log.fit(building)
    beta0, beta_out, beta_z = models.chiller_coefficients()
    assert beta_out > 0 and all(b < 0 for _, b in beta_z)
    probs = models.forecast("F1-N", False, 0, 8 * 3600, 30)
    assert len(probs) == 7 and all(0.0 <= p <= 1.0 for p in probs)
    assert json.loads(models.to_json())["chiller"]["zone_ids"] == building.zone_ids()

    emu = lr.Emulator(building, seed=3, start_hour=7.0)
    emu.run_until(10 * 3600)
    ranked = lr.rank_building(emu, models)
    assert len(ranked["alternatives"]) == 80
    fitness = ranked["ranking"]["fitness"]
    assert all(0.0 <= f <= 1.0 for f in fitness)

    emu = lr.Emulator(building, seed=3, start_hour=7.0)
    report = lr.run_event(emu, models, 8.0, 9.0, target_w=2000.0)
    assert len(report["plans"]) == 12
    assert emu.clock >= 9 * 3600
    assert not math.isnan(report["mean_achieved_reduction_w"])
    print("smoke test passed: mean reduction %.0f W" % report["mean_achieved_reduction_w"])


if __name__ == "__main__":
    main()
