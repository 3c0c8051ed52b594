"""Receding-horizon loop: stop criterion, trace structure, feasibility."""

import math

import numpy as np
import pytest

from driftmpc import DEFAULT_LIMITS, State
from driftmpc.mpc import MpcConfig, MpcTrace, run_mpc
from driftmpc.ocp import OcpConfig
from driftmpc.solver import SolverConfig

#: Small instance so loop tests stay quick; the full-size closed loop is
#: exercised by the acceptance suite.
FAST = MpcConfig(
    ocp=OcpConfig(horizon_steps=25),
    solver=SolverConfig(max_outer_iterations=10, max_inner_iterations=25),
    max_sim_time=25.0,
)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            MpcConfig(epsilon_r=0.0)
        with pytest.raises(ValueError):
            MpcConfig(max_sim_time=-1.0)

    def test_defaults_match_reference(self):
        cfg = MpcConfig()
        assert cfg.ocp.horizon_steps == 61
        assert cfg.ocp.mpc_period == cfg.ocp.integrator_step == 0.1
        assert cfg.epsilon_r == 1e-8


class TestOriginStart:
    def test_zero_iterations(self):
        trace = run_mpc(State(0, 0, 0, 0, 0), FAST)
        assert trace.status == "converged"
        assert trace.iterations == 0
        assert trace.controls().shape == (0, 2)
        assert trace.final_state.norm() == 0.0


class TestShortRun:
    @pytest.fixture(scope="class")
    def trace(self) -> MpcTrace:
        return run_mpc(State(0.0, -1.5, 0.0, 0.0, 0.0), FAST)

    def test_converges(self, trace):
        assert trace.status == "converged"
        fs = trace.final_state
        assert fs.x**2 + fs.z**2 < FAST.epsilon_r
        assert fs.speed < 1e-3

    def test_inputs_within_boxes(self, trace):
        u = trace.controls()
        assert np.all(np.abs(u[:, 0]) <= DEFAULT_LIMITS.a_m * (1 + 1e-12))
        assert np.all(np.abs(u[:, 1]) <= DEFAULT_LIMITS.omega_m * (1 + 1e-12))

    def test_recursive_feasibility(self, trace):
        # after the first usable solve, every record keeps a usable solve
        statuses = [r.solver_status for r in trace.records]
        first = next(
            i for i, s in enumerate(statuses) if s in ("optimal", "feasible-suboptimal")
        )
        assert all(
            s in ("optimal", "feasible-suboptimal") for s in statuses[first:]
        )

    def test_optimal_solves_meet_terminal_tolerance(self, trace):
        viols = [
            r.terminal_violation
            for r in trace.records
            if r.solver_status == "optimal"
        ]
        assert all(v <= 1e-6 for v in viols)

    def test_objectives_descend_modulo_tolerance(self, trace):
        objs = [r.objective for r in trace.records if math.isfinite(r.objective)]
        objs = np.array(objs)
        increases = np.diff(objs)
        assert np.all(increases <= 1e-6 * np.maximum(1.0, objs[:-1]))

    def test_trace_arrays_consistent(self, trace):
        assert trace.states().shape == (trace.iterations + 1, 5)
        assert trace.controls().shape == (trace.iterations, 2)
        assert trace.objectives().shape == (trace.iterations,)

    def test_records_timestamps(self, trace):
        times = [r.t for r in trace.records]
        np.testing.assert_allclose(np.diff(times), FAST.ocp.mpc_period, atol=1e-12)


class TestTimeLimit:
    def test_budget_respected(self):
        cfg = MpcConfig(
            ocp=OcpConfig(horizon_steps=25),
            solver=SolverConfig(max_outer_iterations=4, max_inner_iterations=10),
            max_sim_time=0.5,
        )
        trace = run_mpc(State(-4.0, 4.0, 0.0, 0.0, 0.0), cfg)
        assert trace.status == "time-limit"
        assert trace.iterations == 5
