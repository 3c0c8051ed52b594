"""Experiment command line: forward | nmpc | grid | verify.

Configuration resolves in three layers: built-in defaults (the reference
parameter set), then an optional JSON config file, then command-line flags;
flags win.  Every run writes the fully resolved configuration next to its
outputs as config.json so results stay reproducible.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .auxiliary import best_branch, make_aux_policy, phase_plan, planned_total_time
from .dynamics import InputLimits, State, simulate
from .mpc import MpcConfig, MpcTrace, run_mpc
from .ocp import OcpConfig
from .solver import SolverConfig
from .terminal_cost import (
    verify_gradient_accuracy,
    verify_oracle_equivalence,
    verify_stability_conditions,
)
from .terminal_set import Branch
from .traceio import forward_trace_rows, mpc_trace_rows, write_json, write_trace_csv

#: Reference grid of start positions (origin excluded).
PAPER_GRID: Tuple[Tuple[float, float], ...] = tuple(
    (x, z) for x in (-4.0, 0.0, 4.0) for z in (-4.0, 0.0, 4.0) if (x, z) != (0.0, 0.0)
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters (defaults match the reference setup)."""

    experiment: str = "nmpc"
    a_max: float = math.sqrt(2.0)
    omega_max: float = math.pi / 8.0
    x0: Tuple[float, float] = (-4.0, 4.0)
    grid: Tuple[Tuple[float, float], ...] = PAPER_GRID
    h: float = 0.1
    delta: float = 0.1
    horizon: int = 61
    eps_r: float = 1e-8
    eps_f: float = 0.0
    max_sim_time: float = 60.0
    samples: int = 10_000
    seed: int = 0
    strategy: str = "ss"  # ss | ss-prime | auto
    out: str = "out"
    jobs: int = 1
    verbose: bool = False

    def limits(self) -> InputLimits:
        return InputLimits(a_m=self.a_max, omega_m=self.omega_max)

    def branch(self, s0: State) -> Branch:
        if self.strategy == "ss":
            return Branch.TOWARD_ORIGIN
        if self.strategy == "ss-prime":
            return Branch.AWAY_FROM_ORIGIN
        if self.strategy == "auto":
            return best_branch(s0)
        raise ValueError(f"unknown strategy {self.strategy!r}")

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(
            ocp=OcpConfig(
                horizon_steps=self.horizon,
                mpc_period=self.delta,
                integrator_step=self.h,
                limits=self.limits(),
                terminal_tolerance=self.eps_f,
            ),
            solver=SolverConfig(
                max_outer_iterations=10,
                max_inner_iterations=25,
                verbose=self.verbose,
            ),
            epsilon_r=self.eps_r,
            max_sim_time=self.max_sim_time,
        )

    def to_jsonable(self) -> dict:
        payload = asdict(self)
        payload["grid"] = [list(p) for p in self.grid]
        payload["x0"] = list(self.x0)
        return payload


def _parse_pair(text: str) -> Tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected X,Z but got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_grid(text: str) -> Tuple[Tuple[float, float], ...]:
    return tuple(_parse_pair(chunk) for chunk in text.split(";") if chunk)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftmpc",
        description="Stabilizing NMPC experiments for a planar drift-nonholonomic vehicle",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("forward", "simulate the auxiliary stabilizing controller"),
        ("nmpc", "run the receding-horizon controller from one start"),
        ("grid", "run the controller over a grid of starts"),
        ("verify", "certify the terminal-cost design conditions"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=Path, help="JSON config file")
        cmd.add_argument("--out", type=Path, help="output directory")
        cmd.add_argument("--x0", type=_parse_pair, help="start position X,Z")
        cmd.add_argument("--a-max", type=float, dest="a_max")
        cmd.add_argument("--omega-max", type=float, dest="omega_max")
        cmd.add_argument("--h", type=float, help="integrator step")
        cmd.add_argument("--delta", type=float, help="control period")
        cmd.add_argument("--horizon", type=int, help="prediction steps")
        cmd.add_argument("--eps-r", type=float, dest="eps_r", help="stop threshold on r^2")
        cmd.add_argument("--eps-f", type=float, dest="eps_f", help="terminal relaxation")
        cmd.add_argument("--max-sim-time", type=float, dest="max_sim_time")
        cmd.add_argument("--samples", type=int, help="verification sample count")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--strategy", choices=["ss", "ss-prime", "auto"])
        cmd.add_argument("--grid", type=_parse_grid, help="starts as x1,z1;x2,z2;...")
        cmd.add_argument("--jobs", type=int, help="worker processes for grid runs")
        cmd.add_argument("--verbose", action="store_true", default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig(experiment=args.command)
    if args.config is not None:
        with open(args.config) as fh:
            raw = json.load(fh)
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        if "grid" in raw:
            raw["grid"] = tuple(tuple(p) for p in raw["grid"])
        if "x0" in raw:
            raw["x0"] = tuple(raw["x0"])
        raw["experiment"] = args.command  # the verb always wins
        cfg = replace(cfg, **raw)
    overrides = {}
    for key in (
        "out", "x0", "a_max", "omega_max", "h", "delta", "horizon",
        "eps_r", "eps_f", "max_sim_time", "samples", "seed", "strategy",
        "grid", "jobs", "verbose",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value) if key == "out" else value
    return replace(cfg, **overrides)


def _measure_phases(statuses: List[str], times: np.ndarray) -> List[dict]:
    """Phase intervals as observed in a forward trace."""
    phases = []
    start = 0
    for k in range(1, len(statuses)):
        if statuses[k] != statuses[start]:
            phases.append(
                {"kind": statuses[start], "t_start": float(times[start]), "t_end": float(times[k])}
            )
            start = k
    phases.append(
        {"kind": statuses[start], "t_start": float(times[start]), "t_end": float(times[-1])}
    )
    return phases


def cmd_forward(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    write_json(out / "config.json", cfg.to_jsonable())
    s0 = State(cfg.x0[0], cfg.x0[1], 0.0, 0.0, 0.0)
    lim = cfg.limits()
    branch = cfg.branch(s0)
    plan = phase_plan(s0, lim, branch)
    total = planned_total_time(s0, lim, branch)
    t_end = max(total + 10 * cfg.h, cfg.h)
    t0 = time.perf_counter()
    traj = simulate(s0, make_aux_policy(lim, branch, cfg.h), cfg.h, t_end)
    runtime = time.perf_counter() - t0
    rows = forward_trace_rows(traj, lim, branch, cfg.h)
    write_trace_csv(out / "trace.csv", **rows)
    final_norm = float(np.linalg.norm(traj.states[-1]))
    summary = {
        "experiment": "forward",
        "strategy": cfg.strategy,
        "branch": branch.value,
        "planned_phases": [
            {"kind": p.kind, "t_start": p.t_start, "t_end": min(p.t_end, t_end)}
            for p in plan
        ],
        "measured_phases": _measure_phases(rows["statuses"], np.asarray(rows["times"])),
        "planned_total_time": total,
        "final_state": traj.states[-1].tolist(),
        "final_norm": final_norm,
        "steps": len(traj.inputs),
        "runtime_seconds": runtime,
    }
    write_json(out / "summary.json", summary)
    print(f"forward: {len(traj.inputs)} steps, final norm {final_norm:.3e}")
    return 0


def _mpc_summary(trace: MpcTrace, wall: float) -> dict:
    final = trace.final_state
    statuses = [r.solver_status for r in trace.records]
    solve_times = [r.solve_time for r in trace.records]
    optimal_viols = [
        r.terminal_violation for r in trace.records if r.solver_status == "optimal"
    ]
    return {
        "status": trace.status,
        "iterations": trace.iterations,
        "final_time": trace.final_time,
        "final_state": final.as_array().tolist(),
        "final_r_squared": final.x**2 + final.z**2,
        "final_speed": final.speed,
        "final_theta": final.theta,
        "solver_status_counts": {s: statuses.count(s) for s in sorted(set(statuses))},
        "max_terminal_violation_on_optimal": max(optimal_viols) if optimal_viols else None,
        "solve_time_mean": float(np.mean(solve_times)) if solve_times else 0.0,
        "solve_time_max": float(np.max(solve_times)) if solve_times else 0.0,
        "wall_seconds": wall,
    }


def cmd_nmpc(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    write_json(out / "config.json", cfg.to_jsonable())
    s0 = State(cfg.x0[0], cfg.x0[1], 0.0, 0.0, 0.0)
    log = print if cfg.verbose else None
    t0 = time.perf_counter()
    trace = run_mpc(s0, cfg.mpc_config(), log=log)
    wall = time.perf_counter() - t0
    write_trace_csv(out / "trace.csv", **mpc_trace_rows(trace))
    summary = _mpc_summary(trace, wall)
    write_json(out / "summary.json", summary)
    print(
        f"nmpc: {trace.status} after {trace.iterations} iterations, "
        f"final r^2 {summary['final_r_squared']:.3e}"
    )
    return 0 if trace.status != "solver-chain-failure" else 1


def _damping_half_plane(states: np.ndarray) -> str:
    """Half plane hosting the final close-range maneuvers."""
    r = np.hypot(states[:, 0], states[:, 1])
    close = states[r < max(0.25, 0.05 * r.max())]
    if close.size == 0:
        close = states[-max(1, len(states) // 5):]
    return "x>=0" if float(np.mean(close[:, 0])) >= 0.0 else "x<=0"


def _run_grid_point(payload: Tuple[dict, Tuple[float, float]]) -> dict:
    raw_cfg, (x0, z0) = payload
    raw_cfg = dict(raw_cfg)
    raw_cfg["grid"] = tuple(tuple(p) for p in raw_cfg["grid"])
    raw_cfg["x0"] = (x0, z0)
    cfg = ExperimentConfig(**raw_cfg)
    out = Path(cfg.out) / f"start_{x0:+.1f}_{z0:+.1f}"
    sub_cfg = replace(cfg, out=str(out))
    t0 = time.perf_counter()
    trace = run_mpc(State(x0, z0, 0.0, 0.0, 0.0), sub_cfg.mpc_config())
    wall = time.perf_counter() - t0
    write_trace_csv(out / "trace.csv", **mpc_trace_rows(trace))
    summary = _mpc_summary(trace, wall)
    states = trace.states()
    summary["x0"] = [x0, z0]
    summary["damping_half_plane"] = _damping_half_plane(states)
    summary["started_half_plane"] = "x>=0" if x0 >= 0 else "x<=0"
    write_json(out / "summary.json", summary)
    return summary


def cmd_grid(cfg: ExperimentConfig) -> int:
    if not cfg.grid:
        raise SystemExit("grid must contain at least one start")
    out = Path(cfg.out)
    write_json(out / "config.json", cfg.to_jsonable())
    payloads = [(cfg.to_jsonable(), point) for point in cfg.grid]
    if cfg.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_grid_point, payloads))
    else:
        results = [_run_grid_point(p) for p in payloads]
    results.sort(key=lambda s: tuple(s["x0"]))
    converged = sum(1 for s in results if s["status"] == "converged")
    aggregate = {
        "n_starts": len(results),
        "n_converged": converged,
        "all_converged": converged == len(results),
        "runs": results,
    }
    write_json(out / "aggregate.json", aggregate)
    for s in results:
        print(
            f"start ({s['x0'][0]:+.1f}, {s['x0'][1]:+.1f}): {s['status']} in "
            f"{s['iterations']} iterations; damping on {s['damping_half_plane']}"
        )
    print(f"grid: {converged}/{len(results)} converged")
    return 0 if converged == len(results) else 1


def cmd_verify(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    write_json(out / "config.json", cfg.to_jsonable())
    lim = cfg.limits()
    stability = verify_stability_conditions(
        lim, samples=cfg.samples, seed=cfg.seed,
        horizon_steps=cfg.horizon, step=cfg.delta,
    )
    oracle = verify_oracle_equivalence(lim, samples=cfg.samples, seed=cfg.seed)
    gradient = verify_gradient_accuracy(
        lim, samples=max(1, cfg.samples // 10), seed=cfg.seed
    )
    passed = stability.passed and oracle.passed and gradient.passed
    report = {
        "passed": passed,
        "stability": stability.to_dict(),
        "oracle_equivalence": oracle.to_dict(),
        "gradient_check": gradient.to_dict(),
    }
    write_json(out / "report.json", report)
    for cond in stability.conditions + [oracle, gradient]:
        print(f"{'PASS' if cond.passed else 'FAIL'}  {cond.name}: {cond.detail}")
    print("verify:", "PASS" if passed else "FAIL")
    return 0 if passed else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        parser.error(str(exc))
    handlers = {
        "forward": cmd_forward,
        "nmpc": cmd_nmpc,
        "grid": cmd_grid,
        "verify": cmd_verify,
    }
    return handlers[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
