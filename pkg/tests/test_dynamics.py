"""Model equations, RK4 integration, and closed-loop simulation plumbing."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftmpc import (
    DEFAULT_LIMITS,
    Control,
    InputLimits,
    State,
    dynamics_rhs,
    rk4_step,
    simulate,
    wrap_angle,
)

A_M = DEFAULT_LIMITS.a_m
OMEGA_M = DEFAULT_LIMITS.omega_m

finite_angles = st.floats(-10.0, 10.0)
small_floats = st.floats(-20.0, 20.0)


def make_state(x=0.0, z=0.0, theta=0.0, vx=0.0, vz=0.0):
    return State(x, z, theta, vx, vz)


class TestRhs:
    def test_equilibrium(self):
        d = dynamics_rhs(make_state(), Control(0.0, 0.0))
        assert np.all(d == 0.0)

    def test_pure_thrust_at_zero_pitch(self):
        d = dynamics_rhs(make_state(), Control(A_M, 0.0))
        np.testing.assert_allclose(d, [0.0, 0.0, 0.0, 0.0, A_M])

    def test_thrust_at_quarter_turn(self):
        d = dynamics_rhs(make_state(theta=math.pi / 2), Control(1.0, 0.0))
        np.testing.assert_allclose(d, [0.0, 0.0, 0.0, -1.0, 0.0], atol=1e-15)

    @given(
        x=small_floats, z=small_floats, theta=finite_angles,
        vx=small_floats, vz=small_floats,
        a=st.floats(-A_M, A_M), omega=st.floats(-OMEGA_M, OMEGA_M),
    )
    @settings(max_examples=200, deadline=None)
    def test_no_lateral_acceleration(self, x, z, theta, vx, vz, a, omega):
        s = make_state(x, z, theta, vx, vz)
        d = dynamics_rhs(s, Control(a, omega))
        residual = d[3] * math.cos(s.theta) + d[4] * math.sin(s.theta)
        assert abs(residual) <= 1e-12 * max(1.0, abs(a))


class TestRk4:
    def test_zero_state_zero_control_fixed(self):
        s = rk4_step(make_state(), Control(0.0, 0.0), 0.37)
        assert s == make_state()

    def test_double_integrator_exact(self):
        # theta frozen at 0 makes the thrust axis constant; RK4 is exact.
        h = 0.1
        s = rk4_step(make_state(), Control(A_M, 0.0), h)
        assert s.z == pytest.approx(A_M * h * h / 2, abs=1e-15)
        assert s.vz == pytest.approx(A_M * h, abs=1e-15)
        assert s.x == s.vx == s.theta == 0.0

    def test_pure_rotation(self):
        s = rk4_step(make_state(), Control(0.0, OMEGA_M), 0.1)
        assert s.theta == pytest.approx(OMEGA_M * 0.1, abs=1e-15)

    def test_theta_rewrapped(self):
        s = rk4_step(make_state(theta=3.1), Control(0.0, 1.0), 0.2)
        assert -math.pi <= s.theta <= math.pi
        assert s.theta == pytest.approx(wrap_angle(3.1 + 0.2), abs=1e-12)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            rk4_step(make_state(x=math.nan), Control(0.0, 0.0), 0.1)
        with pytest.raises(ValueError):
            rk4_step(make_state(), Control(math.inf, 0.0), 0.1)
        with pytest.raises(ValueError):
            rk4_step(make_state(), Control(0.0, 0.0), 0.0)

    @given(
        theta=finite_angles, vx=small_floats, vz=small_floats,
        a=st.floats(-A_M, A_M), omega=st.floats(0.05, OMEGA_M),
    )
    @settings(max_examples=60, deadline=None)
    def test_fourth_order_convergence(self, theta, vx, vz, a, omega):
        # One step at h versus two at h/2, against a fine reference; the
        # one-step error is O(h^5) so halving gains at least 16x.
        s0 = make_state(0.0, 0.0, theta, vx, vz)
        u = Control(a, omega)
        h = 0.4

        def advance(state, step, n):
            for _ in range(n):
                state = rk4_step(state, u, step)
            return state

        ref = advance(s0, h / 256, 256).as_array()
        err_h = np.linalg.norm(advance(s0, h, 1).as_array() - ref)
        err_h2 = np.linalg.norm(advance(s0, h / 2, 2).as_array() - ref)
        if err_h > 1e-10:  # below that, roundoff dominates the ratio
            assert err_h / max(err_h2, 1e-300) >= 16.0


class TestSimulate:
    def test_zero_horizon(self):
        traj = simulate(make_state(x=1.0), lambda t, s: Control(0.0, 0.0), 0.1, 0.0)
        assert len(traj) == 1
        assert traj.inputs.shape == (0, 2)
        assert traj.state(0).x == 1.0

    def test_rotation_to_wrap_boundary(self):
        traj = simulate(
            make_state(), lambda t, s: Control(0.0, OMEGA_M), 0.1, math.pi / OMEGA_M
        )
        assert abs(traj.final_state().theta) == pytest.approx(math.pi, abs=1e-9)

    def test_drift_preserves_velocity(self):
        s0 = make_state(vx=0.3, vz=-1.1, theta=0.7)
        traj = simulate(s0, lambda t, s: Control(0.0, 0.0), 0.05, 3.0)
        np.testing.assert_allclose(traj.states[:, 3], 0.3, atol=1e-14)
        np.testing.assert_allclose(traj.states[:, 4], -1.1, atol=1e-14)

    def test_policy_errors_propagate(self):
        def bad_policy(t, s):
            raise RuntimeError("sensor fault")

        with pytest.raises(RuntimeError, match="sensor fault"):
            simulate(make_state(), bad_policy, 0.1, 1.0)

    def test_nonfinite_control_rejected(self):
        with pytest.raises(ValueError):
            simulate(make_state(), lambda t, s: Control(math.nan, 0.0), 0.1, 1.0)


class TestTypes:
    def test_state_wraps_theta_on_construction(self):
        s = State(0.0, 0.0, 2 * math.pi + 0.25, 0.0, 0.0)
        assert s.theta == pytest.approx(0.25, abs=1e-12)

    def test_limits_validated(self):
        with pytest.raises(ValueError):
            InputLimits(a_m=0.0, omega_m=1.0)
        with pytest.raises(ValueError):
            InputLimits(a_m=1.0, omega_m=-0.5)

    def test_control_clipping(self):
        lim = InputLimits(1.0, 0.5)
        c = Control(3.0, -2.0).clipped(lim)
        assert (c.a, c.omega) == (1.0, -0.5)
        assert c.within(lim)

    @given(theta=st.floats(-50.0, 50.0))
    @settings(max_examples=200, deadline=None)
    def test_wrap_angle_range(self, theta):
        w = wrap_angle(theta)
        assert -math.pi <= w <= math.pi
        assert math.cos(w) == pytest.approx(math.cos(theta), abs=1e-9)
        assert math.sin(w) == pytest.approx(math.sin(theta), abs=1e-9)
