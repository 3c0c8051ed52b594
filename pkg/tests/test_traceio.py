"""Trace CSV/JSON round trips and schema stability."""

import numpy as np
import pytest

from driftmpc import DEFAULT_LIMITS, Branch, State, make_aux_policy, simulate
from driftmpc.traceio import (
    TRACE_COLUMNS,
    forward_trace_rows,
    read_json,
    read_trace_csv,
    write_json,
    write_trace_csv,
)


def test_schema_is_stable():
    assert TRACE_COLUMNS == [
        "t", "x", "z", "theta", "vx", "vz", "a", "omega", "objective", "status",
    ]


def test_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    n = 17
    times = np.arange(n + 1) * 0.1
    states = rng.standard_normal((n + 1, 5))
    inputs = rng.standard_normal((n, 2))
    objectives = rng.standard_normal(n).tolist()
    statuses = [f"s{i}" for i in range(n + 1)]
    path = tmp_path / "trace.csv"
    write_trace_csv(path, times, states, inputs, objectives, statuses)
    back = read_trace_csv(path)
    np.testing.assert_array_equal(back["t"], times)
    np.testing.assert_array_equal(back["states"], states)
    np.testing.assert_array_equal(back["inputs"][:n], inputs)
    np.testing.assert_array_equal(back["objective"][:n], objectives)
    assert back["status"] == statuses
    # the final row has no control
    assert np.isnan(back["inputs"][n]).all()


def test_forward_rows_phase_labels(tmp_path):
    s0 = State(-4.0, 4.0, 0.0, 0.0, 0.0)
    traj = simulate(s0, make_aux_policy(DEFAULT_LIMITS, Branch.TOWARD_ORIGIN, 0.1), 0.1, 16.0)
    rows = forward_trace_rows(traj, DEFAULT_LIMITS, Branch.TOWARD_ORIGIN, 0.1)
    assert rows["statuses"][0] == "rotate-to-set"
    assert rows["statuses"][-1] == "stop"
    path = tmp_path / "fwd.csv"
    write_trace_csv(path, **rows)
    back = read_trace_csv(path)
    assert back["status"][0] == "rotate-to-set"
    assert np.isnan(back["objective"][0])


def test_schema_mismatch_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="missing columns"):
        read_trace_csv(path)


def test_json_round_trip(tmp_path):
    payload = {"alpha": 1.5, "items": [1, 2, 3], "nested": {"ok": True}}
    path = tmp_path / "x.json"
    write_json(path, payload)
    assert read_json(path) == payload
