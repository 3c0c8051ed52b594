"""Reference pitch, terminal-set membership, and reduced dynamics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftmpc import (
    DEFAULT_LIMITS,
    Branch,
    Control,
    State,
    TerminalSetState,
    TerminalSetViolation,
    classify_terminal,
    reduce_state,
    reduced_rhs,
    reference_pitch,
    simulate,
)
from driftmpc.auxiliary import make_aux_policy
from driftmpc.terminal_set import alignment_residuals

LIM = DEFAULT_LIMITS


def member_state(r, theta_pos, v):
    """State at distance r, direction theta_pos, aligned and moving inward."""
    x, z = r * math.sin(theta_pos), -r * math.cos(theta_pos)
    pitch = reference_pitch(x, z)
    if r > 0:
        vx, vz = -x / r * v, -z / r * v
    else:
        vx = vz = 0.0
    return State(x, z, pitch, vx, vz)


class TestReferencePitch:
    def test_below_origin(self):
        assert reference_pitch(0.0, -1.0) == 0.0

    def test_paper_start(self):
        assert reference_pitch(-4.0, 4.0) == pytest.approx(-3 * math.pi / 4, abs=1e-15)

    def test_diagonal(self):
        assert reference_pitch(1.0, -1.0) == pytest.approx(math.pi / 4, abs=1e-15)

    def test_origin_maps_to_zero(self):
        assert reference_pitch(0.0, 0.0) == 0.0

    def test_above_origin(self):
        assert reference_pitch(0.0, 2.0) == pytest.approx(math.pi, abs=1e-15)

    @given(x=st.floats(-50, 50), z=st.floats(-50, 50))
    @settings(max_examples=300, deadline=None)
    def test_matches_atan2_and_range(self, x, z):
        got = reference_pitch(x, z)
        assert -math.pi <= got <= math.pi
        if (x, z) != (0.0, 0.0):
            assert got == pytest.approx(math.atan2(x, 0.0 - z), abs=0.0)

    @given(x=st.floats(-50, 50).filter(lambda v: abs(v) > 1e-6),
           z=st.floats(-50, 50).filter(lambda v: abs(v) > 1e-6))
    @settings(max_examples=200, deadline=None)
    def test_points_thrust_at_origin(self, x, z):
        # e_z^B at the reference pitch is the unit vector from (x, z) to 0.
        pitch = reference_pitch(x, z)
        r = math.hypot(x, z)
        assert -math.sin(pitch) == pytest.approx(-x / r, abs=1e-12)
        assert math.cos(pitch) == pytest.approx(-z / r, abs=1e-12)


class TestClassify:
    def test_origin_is_member(self):
        m = classify_terminal(State(0, 0, 0, 0, 0), LIM)
        assert m.member and m.branch is Branch.ORIGIN

    def test_aligned_below_origin(self):
        r0, v = 3.0, 1.5
        assert v * v <= 2 * LIM.a_m * r0
        m = classify_terminal(State(0.0, -r0, 0.0, 0.0, v), LIM)
        assert m.member and m.branch is Branch.TOWARD_ORIGIN

    def test_speed_bound_rejects(self):
        r0 = 0.1
        v = math.sqrt(2 * LIM.a_m * r0) * 1.2
        m = classify_terminal(State(0.0, -r0, 0.0, 0.0, v), LIM)
        assert not m.member

    def test_reverse_branch(self):
        # Body axis away from the origin, still moving inward.
        s = State(0.0, -2.0, math.pi, 0.0, 1.0)
        m = classify_terminal(s, LIM)
        assert m.member and m.branch is Branch.AWAY_FROM_ORIGIN

    def test_misaligned_velocity_rejected(self):
        s = State(0.0, -2.0, 0.0, 0.5, 1.0)
        assert not classify_terminal(s, LIM).member

    @given(
        r=st.floats(0.01, 20.0), theta_pos=st.floats(-math.pi, math.pi),
        frac=st.floats(0.0, 1.0), scale=st.floats(0.1, 5.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_membership_under_uniform_scaling(self, r, theta_pos, frac, scale):
        # Scaling position and velocity together keeps alignment; membership
        # then hinges on the speed bound alone.
        v = frac * math.sqrt(2 * LIM.a_m * r)
        s = member_state(r, theta_pos, v)
        assert classify_terminal(s, LIM).member
        scaled = State(s.x * scale, s.z * scale, s.theta, s.vx * scale, s.vz * scale)
        still_bounded = (v * scale) ** 2 <= 2 * LIM.a_m * (r * scale) + 1e-8
        assert classify_terminal(scaled, LIM).member == still_bounded


class TestReduce:
    def test_origin(self):
        ts = reduce_state(State(0, 0, 0, 0, 0), LIM)
        assert (ts.r, ts.theta, ts.v) == (0.0, 0.0, 0.0)

    def test_simple_member(self):
        ts = reduce_state(State(0.0, -4.0, 0.0, 0.0, 1.0), LIM)
        assert (ts.r, ts.theta, ts.v) == (4.0, 0.0, 1.0)

    def test_diagonal_member(self):
        pitch = reference_pitch(3.0, -4.0)
        vx, vz = -3.0 / 5.0, 4.0 / 5.0
        ts = reduce_state(State(3.0, -4.0, pitch, vx, vz), LIM)
        assert ts.r == pytest.approx(5.0, abs=1e-12)
        assert ts.theta == pytest.approx(pitch, abs=0.0)
        assert ts.v == pytest.approx(1.0, abs=1e-12)

    def test_rejects_nonmember(self):
        with pytest.raises(TerminalSetViolation):
            reduce_state(State(1.0, 1.0, 0.0, 1.0, 0.0), LIM)

    def test_reduced_state_validation(self):
        with pytest.raises(ValueError):
            TerminalSetState(-1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            TerminalSetState(1.0, 0.0, -0.1)


class TestReducedRhs:
    def test_thrust_only(self):
        d = reduced_rhs(TerminalSetState(2.0, 0.3, 0.0), Control(LIM.a_m, 0.0), Branch.TOWARD_ORIGIN)
        np.testing.assert_allclose(d, [0.0, 0.0, LIM.a_m])

    def test_coasting_forward(self):
        d = reduced_rhs(TerminalSetState(2.0, 0.3, 1.2), Control(0.0, 0.0), Branch.TOWARD_ORIGIN)
        np.testing.assert_allclose(d, [-1.2, 0.0, 0.0])

    def test_coasting_reverse(self):
        d = reduced_rhs(TerminalSetState(2.0, 0.3, 1.2), Control(0.0, 0.0), Branch.AWAY_FROM_ORIGIN)
        np.testing.assert_allclose(d, [1.2, 0.0, 0.0])

    def test_origin_branch_rejected(self):
        with pytest.raises(ValueError):
            reduced_rhs(TerminalSetState(0, 0, 0), Control(0, 0), Branch.ORIGIN)


class TestFullVersusReducedConsistency:
    @pytest.mark.parametrize("seed", range(6))
    def test_full_dynamics_match_reduced(self, seed):
        # Evolve a member with the in-set control through the 5-state model,
        # reduce, and compare with integrating (r, theta, v) directly.
        rng = np.random.default_rng(seed)
        r0 = float(rng.uniform(1.0, 6.0))
        v0 = float(rng.uniform(0.0, 0.9)) * math.sqrt(2 * LIM.a_m * r0)
        s = member_state(r0, float(rng.uniform(-math.pi, math.pi)), v0)
        h = 0.05
        policy = make_aux_policy(LIM, Branch.TOWARD_ORIGIN, h)
        n = 20
        red = np.array([s.r, s.theta, s.speed])
        for _ in range(n):
            u = policy(0.0, s)
            # reduced model: exact kinematics for piecewise-constant controls
            red = red + np.array([
                -red[2] * h - 0.5 * u.a * h * h,
                u.omega * h,
                u.a * h,
            ])
            from driftmpc import rk4_step

            s = rk4_step(s, u, h)
            np.testing.assert_allclose(
                [s.r, s.theta, s.speed], red, atol=1e-9,
                err_msg="reduced and full trajectories diverged",
            )


def test_residuals_zero_exactly_on_members():
    s = member_state(5.0, 1.1, 2.0)
    res = alignment_residuals(s)
    assert np.max(np.abs(res)) <= 1e-12


def test_membership_invariant_along_aux_slide():
    s0 = member_state(4.0, -2.0, 0.5)
    traj = simulate(s0, make_aux_policy(LIM, Branch.TOWARD_ORIGIN, 0.1), 0.1, 5.0)
    for k in range(len(traj)):
        assert classify_terminal(traj.state(k), LIM, 1e-6).member
