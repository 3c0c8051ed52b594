"""Reference pitch geometry, terminal-set membership, and reduced dynamics.

The terminal set collects the states where the body z-axis and the velocity
are collinear with the line through the origin, the craft is moving toward
the origin, and the speed leaves room to brake: V^2 <= 2 a_m r.  On that set
the craft behaves like a double integrator along the line plus a decoupled
angle, which is what makes the closed-form cost-to-go possible.

Membership is expressed through three bilinear alignment residuals

    c1 = vx cos(theta) + vz sin(theta)      (velocity x body z-axis)
    c2 = x  cos(theta) + z  sin(theta)      (position x body z-axis)
    c3 = x vx + z vz + r V                  (velocity anti-parallel to position)

which all vanish on the set.  Two branches exist: the body axis can point
toward the origin (forward slide) or away from it (reverse slide); both share
the same residuals and speed bound.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import Control, InputLimits, State, wrap_angle

#: Default absolute tolerance on the normalized alignment residuals.
DEFAULT_TOL = 1e-8


class TerminalSetViolation(ValueError):
    """Raised when an operation requires a terminal-set member and gets none."""


class Branch(enum.Enum):
    """Which way the body z-axis points relative to the origin."""

    TOWARD_ORIGIN = "toward-origin"
    AWAY_FROM_ORIGIN = "away-from-origin"
    ORIGIN = "origin"


@dataclass(frozen=True)
class TerminalSetState:
    """Reduced state [r, theta, v] valid inside the terminal set.

    v is the speed magnitude; the reverse branch reuses the same magnitudes
    and only the reduced dynamics interpret the sign convention differently.
    """

    r: float
    theta: float
    v: float

    def __post_init__(self) -> None:
        if self.r < 0.0 or self.v < 0.0:
            raise ValueError(f"r and v must be nonnegative, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.theta, self.v])


@dataclass(frozen=True)
class TerminalMembership:
    """Classification result: membership flag, branch, and raw residuals."""

    member: bool
    branch: Optional[Branch]
    residuals: np.ndarray  # (3,) normalized alignment residuals
    speed_margin: float  # 2 a_m r - V^2 (nonnegative on members)


def reference_pitch(x: float, z: float) -> float:
    """Pitch angle that points the body z-axis (thrust) at the origin.

    Equals atan2(x, -z); (0, 0) maps to 0.  The result is in [-pi, pi].
    """
    # 0.0 - z turns a signed zero into +0.0 so that (0, 0) -> 0, not pi.
    return math.atan2(x, 0.0 - z)


def alignment_residuals(s: State) -> np.ndarray:
    """Raw bilinear residuals (c1, c2, c3); all zero on the terminal set."""
    ct = math.cos(s.theta)
    st = math.sin(s.theta)
    c1 = s.vx * ct + s.vz * st
    c2 = s.x * ct + s.z * st
    c3 = s.x * s.vx + s.z * s.vz + s.r * s.speed
    return np.array([c1, c2, c3])


def classify_terminal(
    s: State, lim: InputLimits, tol: float = DEFAULT_TOL
) -> TerminalMembership:
    """Decide terminal-set membership and branch.

    A state is a member when all three alignment residuals, normalized by
    max(1, r*V), are within tol and the speed bound V^2 <= 2 a_m r holds with
    the same slack.  The origin itself (r, V below tol) is a member on the
    dedicated origin branch.
    """
    if tol < 0.0:
        raise ValueError(f"tolerance must be nonnegative, got {tol}")
    r = s.r
    v = s.speed
    scale = max(1.0, r * v)
    residuals = alignment_residuals(s) / scale
    speed_margin = 2.0 * lim.a_m * r - v * v

    aligned = bool(np.all(np.abs(residuals) <= tol))
    member = aligned and speed_margin >= -tol
    branch: Optional[Branch] = None
    if member:
        if r <= tol:
            branch = Branch.ORIGIN
        else:
            # kappa2 = r . e_z^B: negative when the axis points at the origin.
            kappa2 = -s.x * math.sin(s.theta) + s.z * math.cos(s.theta)
            branch = Branch.TOWARD_ORIGIN if kappa2 < 0.0 else Branch.AWAY_FROM_ORIGIN
    return TerminalMembership(
        member=member, branch=branch, residuals=residuals, speed_margin=speed_margin
    )


def reduce_state(
    s: State, lim: InputLimits, tol: float = DEFAULT_TOL
) -> TerminalSetState:
    """Project a terminal-set member onto the reduced coordinates (r, theta, v).

    Raises TerminalSetViolation for non-members.
    """
    membership = classify_terminal(s, lim, tol)
    if not membership.member:
        raise TerminalSetViolation(
            f"state is not in the terminal set (residuals {membership.residuals}, "
            f"speed margin {membership.speed_margin:.3e})"
        )
    return TerminalSetState(r=s.r, theta=s.theta, v=s.speed)


def reduced_rhs(ts: TerminalSetState, u: Control, branch: Branch) -> np.ndarray:
    """In-set dynamics [r', theta', v'].

    Forward slide: r' = -v (speed is positive toward the origin).  Reverse
    slide uses the opposite sign convention, where the algebraic velocity
    along the body axis is negative while reversing: r' = +v.
    """
    if branch is Branch.TOWARD_ORIGIN:
        return np.array([-ts.v, u.omega, u.a])
    if branch is Branch.AWAY_FROM_ORIGIN:
        return np.array([ts.v, u.omega, u.a])
    raise ValueError(f"reduced dynamics need a slide branch, got {branch}")


def branch_reference_pitch(x: float, z: float, branch: Branch) -> float:
    """Alignment pitch for a branch: theta_r, or theta_r - pi for reverse."""
    theta_r = reference_pitch(x, z)
    if branch is Branch.AWAY_FROM_ORIGIN:
        return wrap_angle(theta_r - math.pi)
    return theta_r
