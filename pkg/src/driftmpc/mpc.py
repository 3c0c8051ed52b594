"""Receding-horizon execution: solve, apply the first segment, shift.

Each iteration reads the plant state, builds the shooting OCP, warm-starts
it (auxiliary rollout on the first pass, shifted previous solution plus
shifted multipliers afterwards), solves, and applies the first control over
one period to the RK4 plant.  The loop stops when the squared distance to
the origin falls below the threshold (the craft then commands zero) or the
simulated-time budget runs out.

The plant and the prediction model are identical here (nominal case), so
the applied trajectory is exactly the concatenation of first segments.  If
a solve fails to produce a usable iterate the loop falls back to the
auxiliary law for that period and flags the record.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .auxiliary import aux_control, best_branch
from .dynamics import Control, State, rk4_step
from .ocp import (
    OcpConfig,
    OcpSolution,
    aux_rollout_vector,
    build_ocp,
    repair_shifted_tail,
    shift_multipliers,
    shift_solution,
)
from .solver import DEFAULT_BACKEND, SolveOutcome, SolverConfig, solve

#: Solver statuses whose first control the loop applies directly.
_USABLE = ("optimal", "feasible-suboptimal")


@dataclass(frozen=True)
class MpcConfig:
    """Closed-loop parameters; defaults reproduce the reference setup."""

    ocp: OcpConfig = field(default_factory=OcpConfig)
    solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(
            max_outer_iterations=12, max_inner_iterations=25
        )
    )
    epsilon_r: float = 1e-8
    max_sim_time: float = 60.0
    backend: str = DEFAULT_BACKEND

    def __post_init__(self) -> None:
        if self.epsilon_r <= 0:
            raise ValueError("epsilon_r must be positive")
        if self.max_sim_time <= 0:
            raise ValueError("max_sim_time must be positive")


@dataclass
class MpcRecord:
    """One receding-horizon iteration."""

    t: float
    state: State
    control: Control
    objective: float
    solver_status: str
    solve_time: float
    terminal_violation: float
    fallback: bool


@dataclass
class MpcTrace:
    """Closed-loop record: per-iteration data plus the final state."""

    records: List[MpcRecord]
    final_time: float
    final_state: State
    status: str  # converged | time-limit | solver-chain-failure

    @property
    def iterations(self) -> int:
        return len(self.records)

    def states(self) -> np.ndarray:
        rows = [r.state.as_array() for r in self.records] + [self.final_state.as_array()]
        return np.array(rows)

    def controls(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, 2))
        return np.array([[r.control.a, r.control.omega] for r in self.records])

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])


def run_mpc(x0: State, cfg: MpcConfig, log=None) -> MpcTrace:
    """Drive the plant from x0 until r^2 < epsilon_r or the time budget ends."""
    plant = x0
    t = 0.0
    delta = cfg.ocp.mpc_period
    lim = cfg.ocp.limits
    records: List[MpcRecord] = []
    prev_solution: Optional[OcpSolution] = None
    prev_multipliers: Optional[np.ndarray] = None
    status = "time-limit"

    n_steps = int(round(cfg.max_sim_time / delta))
    for _ in range(n_steps):
        if plant.x**2 + plant.z**2 < cfg.epsilon_r:
            status = "converged"
            break

        problem = build_ocp(
            plant,
            cfg.ocp,
            theta_hint=None if prev_solution is None else float(prev_solution.states[1][2]),
        )
        if prev_solution is None:
            w0 = aux_rollout_vector(plant, cfg.ocp)
            mult0 = None
        else:
            w0 = repair_shifted_tail(shift_solution(prev_solution, problem), problem)
            mult0 = shift_multipliers(prev_multipliers, problem) if prev_multipliers is not None else None

        t_solve = time.perf_counter()
        try:
            solution, outcome = solve(
                problem, w0, cfg.solver, backend=cfg.backend, multipliers0=mult0
            )
        except Exception:
            solution, outcome = None, None
        solve_time = time.perf_counter() - t_solve

        fallback = False
        if solution is not None and outcome.status in _USABLE:
            u = Control(*solution.first_control).clipped(lim)
            objective = solution.objective
            solver_status = outcome.status
            terminal_violation = max(
                solution.violations["max_terminal_equality"],
                solution.violations["speed_bound_violation"],
            )
            prev_solution = solution
            prev_multipliers = solution.multipliers
        else:
            # failure policy: no usable iterate, steer with the auxiliary law
            u = aux_control(plant, lim, best_branch(plant), delta)
            if not all(map(math.isfinite, (u.a, u.omega))):
                status = "solver-chain-failure"
                break
            objective = math.nan
            solver_status = "fallback-aux" if solution is None else outcome.status
            terminal_violation = math.nan
            fallback = True
            if solution is not None and np.all(np.isfinite(solution.states)):
                # keep the warm chain alive even when the iterate is unusable
                prev_solution = solution
                prev_multipliers = solution.multipliers
            else:
                prev_solution = None
                prev_multipliers = None

        records.append(
            MpcRecord(
                t=t,
                state=plant,
                control=u,
                objective=objective,
                solver_status=solver_status,
                solve_time=solve_time,
                terminal_violation=terminal_violation,
                fallback=fallback,
            )
        )
        if log:
            log(
                f"t={t:7.2f}  r2={plant.x**2 + plant.z**2:.3e}  obj={objective:.6g}  "
                f"{solver_status}  solve={solve_time:.3f}s"
            )

        for _ in range(cfg.ocp.substeps):
            plant = rk4_step(plant, u, cfg.ocp.integrator_step)
        t += delta
    else:
        if plant.x**2 + plant.z**2 < cfg.epsilon_r:
            status = "converged"

    return MpcTrace(records=records, final_time=t, final_state=plant, status=status)
