"""Planar drift-nonholonomic vehicle model and fixed-step integration.

The vehicle (a thruster craft in vacuum, or a wheeled robot on a slippery
plane) lives in the inertial x-z plane.  Its state is

    x = [x, z, theta, vx, vz]

with position (x, z), pitch angle theta between the body x-axis and the
inertial x-axis, and inertial velocity (vx, vz).  The two inputs are the
thrust acceleration a, acting along the body z-axis
e_z^B = (-sin theta, cos theta), and the angular rate omega:

    x'  = vx
    z'  = vz
    th' = omega
    vx' = -a sin(theta)
    vz' =  a cos(theta)

The craft cannot accelerate laterally: vx' cos(theta) + vz' sin(theta) = 0
holds for every (state, input) pair, which makes this a nonholonomic system
with drift (the velocity keeps carrying the craft at zero input).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi] (pi maps to +pi)."""
    if -math.pi <= theta <= math.pi:
        return theta
    return math.atan2(math.sin(theta), math.cos(theta))


@dataclass(frozen=True)
class State:
    """Full vehicle state; theta is wrapped to [-pi, pi] on construction."""

    x: float
    z: float
    theta: float
    vx: float
    vz: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def r(self) -> float:
        """Distance to the origin."""
        return math.hypot(self.x, self.z)

    @property
    def speed(self) -> float:
        """Velocity magnitude."""
        return math.hypot(self.vx, self.vz)

    def norm(self) -> float:
        """Euclidean norm of the 5-component state vector."""
        return float(np.linalg.norm(self.as_array()))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.z, self.theta, self.vx, self.vz])

    @staticmethod
    def from_array(arr: Sequence[float]) -> "State":
        x, z, theta, vx, vz = (float(v) for v in arr)
        return State(x, z, theta, vx, vz)


@dataclass(frozen=True)
class Control:
    """Input pair: thrust acceleration a and angular rate omega."""

    a: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.omega])

    def within(self, limits: "InputLimits", slack: float = 1e-12) -> bool:
        return abs(self.a) <= limits.a_m + slack and abs(self.omega) <= limits.omega_m + slack

    def clipped(self, limits: "InputLimits") -> "Control":
        return Control(
            min(max(self.a, -limits.a_m), limits.a_m),
            min(max(self.omega, -limits.omega_m), limits.omega_m),
        )


@dataclass(frozen=True)
class InputLimits:
    """Symmetric box limits |a| <= a_m, |omega| <= omega_m."""

    a_m: float
    omega_m: float

    def __post_init__(self) -> None:
        if not (self.a_m > 0 and self.omega_m > 0):
            raise ValueError(f"input limits must be positive, got {self}")


#: Limits used throughout the reference experiments.
DEFAULT_LIMITS = InputLimits(a_m=math.sqrt(2.0), omega_m=math.pi / 8.0)

#: Policy signature used by :func:`simulate`.
Policy = Callable[[float, State], Control]


def dynamics_rhs(s: State, u: Control) -> np.ndarray:
    """Continuous-time state derivative [x', z', theta', vx', vz']."""
    return np.array(
        [s.vx, s.vz, u.omega, -u.a * math.sin(s.theta), u.a * math.cos(s.theta)]
    )


def rhs_array(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized right-hand side for stacked states (..., 5) and inputs (..., 2)."""
    a = u[..., 0]
    omega = u[..., 1]
    out = np.empty_like(x)
    out[..., 0] = x[..., 3]
    out[..., 1] = x[..., 4]
    out[..., 2] = omega
    out[..., 3] = -a * np.sin(x[..., 2])
    out[..., 4] = a * np.cos(x[..., 2])
    return out


def rk4_step_array(x: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step with zero-order hold on u; no angle wrapping."""
    k1 = rhs_array(x, u)
    k2 = rhs_array(x + 0.5 * h * k1, u)
    k3 = rhs_array(x + 0.5 * h * k2, u)
    k4 = rhs_array(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(s: State, u: Control, h: float) -> State:
    """Advance the state by one RK4 step of size h, then re-wrap theta.

    The input is held constant over the step.  Raises ValueError for
    non-finite state or control components or non-positive h.
    """
    if h <= 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    xs = s.as_array()
    us = u.as_array()
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(us))):
        raise ValueError("non-finite state or control passed to rk4_step")
    return State.from_array(rk4_step_array(xs, us, h))


@dataclass
class Trajectory:
    """Time-stamped state/input record produced by :func:`simulate`.

    ``states`` has one more row than ``inputs``; ``inputs[k]`` is held on
    ``[times[k], times[k+1])``.
    """

    times: np.ndarray  # (n+1,)
    states: np.ndarray  # (n+1, 5)
    inputs: np.ndarray  # (n, 2)

    def state(self, k: int) -> State:
        return State.from_array(self.states[k])

    def final_state(self) -> State:
        return State.from_array(self.states[-1])

    def __len__(self) -> int:
        return len(self.times)


def simulate(s0: State, policy: Policy, h: float, t_end: float) -> Trajectory:
    """Roll the closed loop forward with the policy sampled at step boundaries.

    The policy is evaluated once per step (zero-order hold).  The returned
    trajectory includes the initial state; t_end is rounded to a whole number
    of steps.  Raises if the policy emits non-finite controls or the state
    diverges.
    """
    if h <= 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    if t_end < 0.0:
        raise ValueError(f"t_end must be nonnegative, got {t_end}")

    n = int(round(t_end / h))
    times = np.arange(n + 1) * h
    states = np.empty((n + 1, 5))
    inputs = np.empty((n, 2))

    s = s0
    states[0] = s.as_array()
    for k in range(n):
        u = policy(times[k], s)
        s = rk4_step(s, u, h)
        if not np.all(np.isfinite(s.as_array())):
            raise FloatingPointError(f"state diverged at t={times[k + 1]:.3f}")
        inputs[k] = (u.a, u.omega)
        states[k + 1] = s.as_array()
    return Trajectory(times=times, states=states, inputs=inputs)
