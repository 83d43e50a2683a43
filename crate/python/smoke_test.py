"""Smoke test for the dybw extension module.

Build and install first, e.g.

    cd crates/python && maturin build --release -o dist && pip install dist/dybw-*.whl
    python python/smoke_test.py
"""

import json
import math

import dybw


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    g = dybw.Graph(3, [(0, 1), (1, 2)])
    assert g.n == 3 and g.edges == [(0, 1), (1, 2)]
    assert g.coverage_path() == [(0, 1), (1, 2)]

    p = dybw.metropolis(g, [[1], [0, 2], [1]])
    for row in p:
        assert close(sum(row), 1.0)
    assert close(p[0][1], 1 / 3) and close(p[0][0], 2 / 3)

    try:
        dybw.Graph(4, [(0, 1), (2, 3)])
    except ValueError as e:
        assert "not connected" in str(e)
    else:
        raise AssertionError("disconnected graph accepted")

    sched = dybw.Scheduler(g, "dtur")
    plan = sched.next_plan([1.0, 2.0, 5.0])
    assert plan["theta"] == 2.0
    assert plan["established_edge"] == [0, 1]
    times = [1.0, 2.0, 5.0]
    assert dybw.iteration_duration_partial(times, plan["active_sets"]) == 2.0
    assert dybw.iteration_duration_full(times) == 5.0

    cfg = json.loads(dybw.default_config())
    cfg["k"] = 60
    run = dybw.simulate(json.dumps(cfg), seed=3)
    losses = [r["global_loss"] for r in run["records"]]
    assert len(losses) == 60
    assert losses[-1] < math.log(3)
    assert run["summary"]["consensus_phase_converged"]

    again = dybw.simulate(json.dumps(cfg), seed=3)
    assert again == run

    cmp = dybw.compare(json.dumps(cfg), seed=3)
    assert cmp["dtur"]["mean_duration"] <= cmp["full"]["mean_duration"]

    rows = dybw.check(json.dumps(cfg))
    assert all(passed for _, passed, _ in rows), rows

    print(f"ok: final loss {losses[-1]:.4f}, dtur/full duration ratio {cmp['dtur']['duration_ratio_vs_full']:.3f}")


if __name__ == "__main__":
    main()
