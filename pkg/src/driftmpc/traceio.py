"""Trace file formats: CSV records plus JSON summaries.

One CSV schema covers both the auxiliary forward simulation and the
receding-horizon runs so downstream plotting consumes a single format:

    t, x, z, theta, vx, vz, a, omega, objective, status

Every row carries a state; all but the last carry the control held over
[t, t + step).  The objective column is empty for forward simulations; the
status column holds the auxiliary phase name or the solver status.  Floats
are written with repr-fidelity so traces round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .auxiliary import phase_label
from .dynamics import InputLimits, State, Trajectory
from .mpc import MpcTrace
from .terminal_set import Branch

TRACE_COLUMNS = ["t", "x", "z", "theta", "vx", "vz", "a", "omega", "objective", "status"]


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def write_trace_csv(
    path: Union[str, Path],
    times: Sequence[float],
    states: np.ndarray,
    inputs: np.ndarray,
    objectives: Optional[Sequence[float]] = None,
    statuses: Optional[Sequence[str]] = None,
) -> None:
    """Write a trace; states has one more row than inputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(inputs)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for k, (t, row) in enumerate(zip(times, states)):
            if k < n:
                a, omega = inputs[k]
                obj = objectives[k] if objectives is not None else None
                status = statuses[k] if statuses is not None else ""
            else:
                a = omega = obj = None
                status = statuses[k] if statuses is not None and k < len(statuses) else ""
            writer.writerow(
                [_fmt(t)] + [_fmt(v) for v in row] + [_fmt(a), _fmt(omega), _fmt(obj), status]
            )


def read_trace_csv(path: Union[str, Path]) -> dict:
    """Read a trace back into arrays; missing cells become NaN."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_COLUMNS:
            missing = [c for c in TRACE_COLUMNS if c not in header]
            raise ValueError(
                f"unexpected trace schema {header!r}; missing columns: {missing}"
            )
        rows = list(reader)
    numeric = np.full((len(rows), 9), np.nan)
    statuses: List[str] = []
    for i, row in enumerate(rows):
        for j in range(9):
            if row[j] != "":
                numeric[i, j] = float(row[j])
        statuses.append(row[9])
    return {
        "t": numeric[:, 0],
        "states": numeric[:, 1:6],
        "inputs": numeric[:, 6:8],
        "objective": numeric[:, 8],
        "status": statuses,
    }


def forward_trace_rows(
    traj: Trajectory, lim: InputLimits, branch: Branch, h: float
) -> dict:
    """Trace payload for an auxiliary forward simulation."""
    statuses = [
        phase_label(State.from_array(traj.states[k]), lim, branch, h)
        for k in range(len(traj.states))
    ]
    return {
        "times": traj.times,
        "states": traj.states,
        "inputs": traj.inputs,
        "objectives": None,
        "statuses": statuses,
    }


def mpc_trace_rows(trace: MpcTrace) -> dict:
    """Trace payload for a receding-horizon run."""
    states = trace.states()
    inputs = trace.controls()
    times = [r.t for r in trace.records] + [trace.final_time]
    objectives = [r.objective for r in trace.records]
    statuses = [r.solver_status for r in trace.records] + [trace.status]
    return {
        "times": times,
        "states": states,
        "inputs": inputs,
        "objectives": objectives,
        "statuses": statuses,
    }


def write_json(path: Union[str, Path], payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: Union[str, Path]) -> dict:
    with Path(path).open() as fh:
        return json.load(fh)
