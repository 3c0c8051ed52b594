"""Auxiliary stabilizing strategies: control law, timings, phase plans."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftmpc import (
    DEFAULT_LIMITS,
    Branch,
    State,
    TerminalSetViolation,
    aux_control,
    best_branch,
    classify_terminal,
    lemma1_timestamps,
    make_aux_policy,
    phase_plan,
    simulate,
)
from driftmpc.auxiliary import planned_total_time

LIM = DEFAULT_LIMITS
H = 0.1


class TestLemma1:
    def test_at_rest_matches_square_root_law(self):
        for r0 in np.geomspace(1e-3, 50.0, 17):
            ts = lemma1_timestamps(float(r0), 0.0, 0.0, LIM)
            assert ts.t1 == pytest.approx(math.sqrt(r0 / LIM.a_m), rel=1e-12)
            assert ts.t2 == pytest.approx(2 * math.sqrt(r0 / LIM.a_m), rel=1e-12)

    def test_boundary_gives_immediate_deceleration(self):
        r0 = 2.7
        v = math.sqrt(2 * LIM.a_m * r0)
        ts = lemma1_timestamps(r0, v, 0.0, LIM)
        assert ts.t1 <= 1e-10

    def test_worked_instance(self):
        # a_m = sqrt(2), r = 4 sqrt(2), v = 0, theta = -3pi/4, omega_m = pi/8
        ts = lemma1_timestamps(4 * math.sqrt(2), 0.0, -3 * math.pi / 4, LIM)
        assert ts.t1 == pytest.approx(2.0, abs=1e-12)
        assert ts.t2 == pytest.approx(4.0, abs=1e-12)
        assert ts.t3 == pytest.approx(10.0, abs=1e-12)

    def test_rejects_speed_bound_violation(self):
        with pytest.raises(TerminalSetViolation):
            lemma1_timestamps(0.1, 10.0, 0.0, LIM)

    @given(
        r=st.floats(1e-4, 30.0), frac=st.floats(0.0, 1.0),
        theta=st.floats(-math.pi, math.pi),
    )
    @settings(max_examples=300, deadline=None)
    def test_ordering_and_continuity(self, r, frac, theta):
        v = frac * math.sqrt(2 * LIM.a_m * r)
        ts = lemma1_timestamps(r, v, theta, LIM)
        assert 0.0 <= ts.t1 <= ts.t2 <= ts.t3
        assert ts.t3 - ts.t2 == pytest.approx(abs(theta) / LIM.omega_m, rel=1e-12, abs=1e-12)
        # small perturbations move the stamps by a comparable amount
        eps = 1e-8
        ts2 = lemma1_timestamps(r * (1 + eps), v, theta, LIM)
        assert abs(ts2.t1 - ts.t1) <= 1e-5 * max(1.0, ts.t1)


class TestAuxControl:
    def test_paper_start_rotates_clockwise(self):
        u = aux_control(State(-4.0, 4.0, 0.0, 0.0, 0.0), LIM, Branch.TOWARD_ORIGIN, H)
        assert (u.a, u.omega) == (0.0, -LIM.omega_m)

    def test_origin_stops(self):
        u = aux_control(State(0.0, 0.0, 0.0, 0.0, 0.0), LIM, Branch.TOWARD_ORIGIN, H)
        assert (u.a, u.omega) == (0.0, 0.0)

    def test_aligned_below_bound_accelerates(self):
        s = State(0.0, -4.0, 0.0, 0.0, 0.5)
        u = aux_control(s, LIM, Branch.TOWARD_ORIGIN, H)
        assert u.a == pytest.approx(LIM.a_m)
        assert u.omega == 0.0

    def test_reverse_branch_accelerates_backward(self):
        s = State(0.0, -4.0, math.pi, 0.0, 0.5)
        u = aux_control(s, LIM, Branch.AWAY_FROM_ORIGIN, H)
        assert u.a == pytest.approx(-LIM.a_m)
        assert u.omega == 0.0

    def test_rotation_final_step_clipped(self):
        # One hold interval short of alignment: command lands exactly.
        theta_off = LIM.omega_m * H / 2
        s = State(0.0, -4.0, theta_off, 0.0, 0.0)
        u = aux_control(s, LIM, Branch.TOWARD_ORIGIN, H)
        assert u.a == 0.0
        assert u.omega == pytest.approx(-theta_off / H)
        assert abs(u.omega) <= LIM.omega_m

    @given(
        x=st.floats(-10, 10), z=st.floats(-10, 10), theta=st.floats(-math.pi, math.pi),
        vx=st.floats(-2, 2), vz=st.floats(-2, 2),
        branch=st.sampled_from([Branch.TOWARD_ORIGIN, Branch.AWAY_FROM_ORIGIN]),
    )
    @settings(max_examples=300, deadline=None)
    def test_controls_always_inside_box(self, x, z, theta, vx, vz, branch):
        u = aux_control(State(x, z, theta, vx, vz), LIM, branch, H)
        assert abs(u.a) <= LIM.a_m * (1 + 1e-12)
        assert abs(u.omega) <= LIM.omega_m * (1 + 1e-12)


class TestPhasePlan:
    def test_paper_durations(self):
        plan = phase_plan(State(-4.0, 4.0, 0.0, 0.0, 0.0), LIM, Branch.TOWARD_ORIGIN)
        kinds = [p.kind for p in plan]
        assert kinds == ["rotate-to-set", "accelerate", "decelerate", "rotate-to-zero", "stop"]
        durations = [p.duration for p in plan[:-1]]
        np.testing.assert_allclose(durations, [6.0, 2.0, 2.0, 6.0], atol=1e-12)
        assert math.isinf(plan[-1].t_end)

    def test_origin_is_single_stop(self):
        plan = phase_plan(State(0, 0, 0, 0, 0), LIM)
        assert [p.kind for p in plan] == ["stop"]

    def test_on_set_at_rest_skips_rotation(self):
        r0 = 2.0
        plan = phase_plan(State(0.0, -r0, 0.0, 0.0, 0.0), LIM, Branch.TOWARD_ORIGIN)
        durations = [p.duration for p in plan[:-1]]
        t1 = math.sqrt(r0 / LIM.a_m)
        np.testing.assert_allclose(durations, [0.0, t1, t1, 0.0], atol=1e-12)

    def test_phases_contiguous(self):
        plan = phase_plan(State(3.0, 1.0, 0.5, 0.0, 0.0), LIM)
        for a, b in zip(plan[:-1], plan[1:]):
            assert a.t_end == pytest.approx(b.t_start)
            assert a.t_end >= a.t_start


class TestClosedLoop:
    @pytest.mark.parametrize("seed", range(12))
    def test_convergence_within_plan_plus_slack(self, seed):
        # Sampled-data execution pays up to one extra step per phase bound
        # plus the landing-curve quantization; three steps cover it.
        rng = np.random.default_rng(seed)
        s0 = State(
            float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10)),
            float(rng.uniform(-math.pi, math.pi)), 0.0, 0.0,
        )
        branch = best_branch(s0)
        budget = planned_total_time(s0, LIM, branch) + 3 * H
        traj = simulate(s0, make_aux_policy(LIM, branch, H), H, budget)
        norms = np.linalg.norm(traj.states, axis=1)
        assert norms.min() < 1e-3

    def test_input_feasibility_along_run(self):
        s0 = State(-4.0, 4.0, 0.0, 0.0, 0.0)
        traj = simulate(s0, make_aux_policy(LIM, Branch.TOWARD_ORIGIN, H), H, 16.0)
        assert np.all(np.abs(traj.inputs[:, 0]) <= LIM.a_m * (1 + 1e-12))
        assert np.all(np.abs(traj.inputs[:, 1]) <= LIM.omega_m * (1 + 1e-12))

    @pytest.mark.parametrize("branch", [Branch.TOWARD_ORIGIN, Branch.AWAY_FROM_ORIGIN])
    def test_set_invariance_once_entered(self, branch):
        s0 = State(-4.0, 4.0, 0.0, 0.0, 0.0)
        budget = planned_total_time(s0, LIM, branch) + 3 * H
        traj = simulate(s0, make_aux_policy(LIM, branch, H), H, budget)
        member = [
            classify_terminal(traj.state(k), LIM, 1e-6)
            for k in range(len(traj))
        ]
        entered = next(
            i for i, m in enumerate(member) if m.member and m.branch is branch
        )
        assert all(m.member for m in member[entered:])

    def test_landing_is_exact_for_paper_case(self):
        s0 = State(-4.0, 4.0, 0.0, 0.0, 0.0)
        traj = simulate(s0, make_aux_policy(LIM, Branch.TOWARD_ORIGIN, H), H, 16.0)
        assert np.linalg.norm(traj.states[-1]) < 1e-12
