"""Discontinuous auxiliary stabilizing controllers and their phase timings.

Both strategies stabilize the craft in three moves: rotate until the body
z-axis is collinear with the line to the origin, slide along that line with
a bang-bang accelerate/decelerate profile, then rotate the pitch back to
zero.  The forward strategy points the axis at the origin and thrusts
forward; the reverse strategy points it away and backs up.

The slide timings from terminal-set entry at (r, v) are

    t1 = -v/a_m + sqrt(v^2 + 2 a_m r) / (a_m sqrt(2))      (end of accelerate)
    t2 = -v/a_m + sqrt(2) sqrt(v^2 + 2 a_m r) / a_m        (at-rest at origin)
    t3 = t2 + |theta| / omega_m                            (pitch back at zero)

valid whenever v^2 <= 2 a_m r, which is exactly the terminal-set speed bound
(t1 would be negative otherwise).

The controller here is a sampled-data version: it is applied through a
zero-order hold of length h.  Rotation steps are clipped so the final step
lands exactly on the alignment angle, and the slide switches on the state
(v^2 vs 2 a_m r) with the last two steps solved exactly so the craft stops
at the origin instead of chattering across it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

from .dynamics import Control, InputLimits, State, wrap_angle
from .terminal_set import Branch, TerminalSetViolation, branch_reference_pitch

#: Below this scale (meters, m/s) the slide is considered finished.
_ORIGIN_EPS = 1e-9

#: Relative slack on the admissibility bound v^2 <= 2 a_m r.
_SPEED_BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class AuxTimestamps:
    """Slide/rotation durations measured from terminal-set entry."""

    t1: float
    t2: float
    t3: float


@dataclass(frozen=True)
class AuxPhase:
    """One contiguous phase of the auxiliary plan."""

    kind: str  # rotate-to-set | accelerate | decelerate | rotate-to-zero | stop
    t_start: float
    t_end: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


PHASE_KINDS = ("rotate-to-set", "accelerate", "decelerate", "rotate-to-zero", "stop")


def lemma1_timestamps(
    r_tf: float, v_tf: float, theta_tf: float, lim: InputLimits
) -> AuxTimestamps:
    """Closed-form slide timings from an in-set entry state.

    Requires v_tf^2 <= 2 a_m r_tf (with a small relative slack so boundary
    states coming out of a solver are admitted); raises TerminalSetViolation
    otherwise.
    """
    if r_tf < 0.0 or v_tf < 0.0:
        raise ValueError(f"r and v must be nonnegative, got r={r_tf}, v={v_tf}")
    a_m = lim.a_m
    excess = v_tf * v_tf - 2.0 * a_m * r_tf
    if excess > _SPEED_BOUND_SLACK * max(1.0, v_tf * v_tf):
        raise TerminalSetViolation(
            f"speed bound violated: v^2 = {v_tf**2:.6g} > 2 a_m r = {2 * a_m * r_tf:.6g}"
        )
    sigma2 = max(v_tf * v_tf + 2.0 * a_m * r_tf, 0.0)
    root = math.sqrt(sigma2)
    t1 = max(-v_tf / a_m + root / (a_m * math.sqrt(2.0)), 0.0)
    t2 = max(-v_tf / a_m + math.sqrt(2.0) * root / a_m, 0.0)
    t3 = t2 + abs(theta_tf) / lim.omega_m
    return AuxTimestamps(t1=t1, t2=t2, t3=t3)


def best_branch(s: State) -> Branch:
    """Branch whose alignment angle is closest to the current pitch."""
    err_fwd = abs(wrap_angle(branch_reference_pitch(s.x, s.z, Branch.TOWARD_ORIGIN) - s.theta))
    err_rev = abs(wrap_angle(branch_reference_pitch(s.x, s.z, Branch.AWAY_FROM_ORIGIN) - s.theta))
    return Branch.TOWARD_ORIGIN if err_fwd <= err_rev else Branch.AWAY_FROM_ORIGIN


def _landing_clip(r: float, v: float, a_m: float, h: float) -> Optional[float]:
    """Acceleration that steers onto an integer-step braking curve.

    Looks for one hold interval at acceleration a followed by k intervals of
    constant braking a_d <= a_m that end exactly at rest at the origin:

        a(k)   = (2 r - v h (2 + k)) / (h^2 (k + 1))
        a_d(k) = (v + a(k) h) / (k h)

    Returns a for the smallest feasible k (the closest-to-bang-bang plan), or
    None when no such plan fits the input box.
    """
    kmin = max(1, int(math.ceil((2.0 * r - 2.0 * v * h - a_m * h * h) / (h * (a_m * h + v)) - 1e-9)))
    box = a_m * (1.0 + 1e-12)
    for k in range(kmin, kmin + 64):
        a = (2.0 * r - v * h * (2.0 + k)) / (h * h * (k + 1.0))
        if a > box:
            continue
        if a < -box:
            return None
        v1 = v + a * h
        if v1 < 0.0:
            return None
        a_d = v1 / (k * h)
        if a_d <= box:
            return min(a, a_m)
    return None


def _slide_accel(r: float, v: float, lim: InputLimits, h: float) -> float:
    """Signed-magnitude slide acceleration for the forward branch.

    Bang-bang rendered exact under the zero-order hold: accelerate at +a_m
    while an exact landing plan remains feasible afterwards, take one clipped
    step onto a braking curve v^2 = 2 a_d r whose constant rate a_d <= a_m
    finishes in a whole number of intervals, then ride that curve to rest at
    the origin.  The curve is invariant under its own braking rate and lies
    inside the admissible region v^2 <= 2 a_m r, so the sampled loop lands
    exactly instead of chattering across the origin, without ever leaving
    the terminal set.
    """
    a_m = lim.a_m
    # Full thrust while an exact landing stays reachable after the step.
    r1 = r - v * h - 0.5 * a_m * h * h
    v1 = v + a_m * h
    if r1 > 0.0 and _landing_clip(r1, v1, a_m, h) is not None:
        return a_m
    if v > 0.0 and r > 0.0:
        # On an integer-step braking curve and done accelerating: ride it.
        a_d = v * v / (2.0 * r)
        if a_d <= a_m * (1.0 + 1e-9):
            k = 2.0 * r / (v * h)
            if abs(k - round(k)) <= 1e-6 and round(k) >= 1.0:
                return -min(a_d, a_m)
    clip = _landing_clip(r, v, a_m, h)
    if clip is not None:
        return clip
    # No exact plan within the box (adversarial start past the point of no
    # return): kill as much speed as allowed and re-plan from the remainder.
    return max(-a_m, min(a_m, -v / h))


def aux_control(
    s: State,
    lim: InputLimits,
    branch: Branch = Branch.TOWARD_ORIGIN,
    h: float = 0.1,
) -> Control:
    """Sampled-data auxiliary control law for one hold interval of length h.

    Rotate toward the branch alignment angle at full rate (final step
    clipped to land exactly), slide along the line with the bang-bang
    profile, then rotate the pitch to zero at the origin and stop.
    """
    if branch is Branch.ORIGIN:
        branch = Branch.TOWARD_ORIGIN
    r = s.r
    v = s.speed

    if r <= _ORIGIN_EPS and v <= _ORIGIN_EPS:
        # At the origin: unwind the pitch, then stop.
        if abs(s.theta) <= 1e-12:
            return Control(0.0, 0.0)
        omega = -s.theta / h if abs(s.theta) <= lim.omega_m * h else -math.copysign(lim.omega_m, s.theta)
        return Control(0.0, omega)

    theta_ref = branch_reference_pitch(s.x, s.z, branch)
    err = wrap_angle(theta_ref - s.theta)
    # Aligned when the angular error corresponds to a transverse miss below
    # 1e-12 m; a fixed angle threshold would spuriously re-trigger rotation
    # close to the origin, where atan2(x, -z) amplifies roundoff like 1/r.
    align_tol = min(0.5 * lim.omega_m * h, 1e-12 / max(r, 1e-12))
    if abs(err) > align_tol:
        # Not aligned yet: rotate at full rate, clipping the final step.
        omega = err / h if abs(err) <= lim.omega_m * h else math.copysign(lim.omega_m, err)
        return Control(0.0, omega)

    a = _slide_accel(r, v, lim, h)
    if branch is Branch.AWAY_FROM_ORIGIN:
        a = -a  # reversing: thrust opposes the motion direction
    return Control(a, 0.0)


def make_aux_policy(lim: InputLimits, branch: Branch, h: float):
    """Bind the auxiliary law into a (t, state) -> Control policy."""

    def policy(_t: float, s: State) -> Control:
        return aux_control(s, lim, branch, h)

    return policy


def phase_plan(
    s0: State,
    lim: InputLimits,
    branch: Branch = Branch.TOWARD_ORIGIN,
) -> List[AuxPhase]:
    """Continuous-time phase plan from a start at rest or inside the set.

    Returns the contiguous phases [rotate-to-set, accelerate, decelerate,
    rotate-to-zero, stop]; zero-duration phases are kept so the structure is
    fixed.  The stop phase is open-ended (t_end = inf).
    """
    r0 = s0.r
    v0 = s0.speed
    if r0 <= _ORIGIN_EPS and v0 <= _ORIGIN_EPS:
        if abs(s0.theta) <= _ORIGIN_EPS:
            return [AuxPhase("stop", 0.0, math.inf)]
        # Already at the origin: only the pitch unwind remains.
        t3 = abs(s0.theta) / lim.omega_m
        return [
            AuxPhase("rotate-to-set", 0.0, 0.0),
            AuxPhase("accelerate", 0.0, 0.0),
            AuxPhase("decelerate", 0.0, 0.0),
            AuxPhase("rotate-to-zero", 0.0, t3),
            AuxPhase("stop", t3, math.inf),
        ]

    theta_ref = branch_reference_pitch(s0.x, s0.z, branch)
    rot_in = abs(wrap_angle(theta_ref - s0.theta)) / lim.omega_m
    if v0 > _ORIGIN_EPS and rot_in > _ORIGIN_EPS:
        raise ValueError(
            "phase_plan needs a start at rest or already aligned inside the set"
        )
    stamps = lemma1_timestamps(r0, v0, theta_ref, lim)
    rot_out = abs(theta_ref) / lim.omega_m

    t0 = rot_in
    t1 = t0 + stamps.t1
    t2 = t0 + stamps.t2
    t3 = t2 + rot_out
    return [
        AuxPhase("rotate-to-set", 0.0, t0),
        AuxPhase("accelerate", t0, t1),
        AuxPhase("decelerate", t1, t2),
        AuxPhase("rotate-to-zero", t2, t3),
        AuxPhase("stop", t3, math.inf),
    ]


def phase_label(s: State, lim: InputLimits, branch: Branch, h: float) -> str:
    """Phase name the controller is currently executing (for trace logging)."""
    r = s.r
    v = s.speed
    if r <= _ORIGIN_EPS and v <= _ORIGIN_EPS:
        return "stop" if abs(s.theta) <= 1e-12 else "rotate-to-zero"
    theta_ref = branch_reference_pitch(s.x, s.z, branch)
    align_tol = min(0.5 * lim.omega_m * h, 1e-12 / max(r, 1e-12))
    if abs(wrap_angle(theta_ref - s.theta)) > align_tol:
        return "rotate-to-set"
    a = _slide_accel(r, v, lim, h)
    return "accelerate" if a > 0.0 else "decelerate"


def planned_total_time(s0: State, lim: InputLimits, branch: Optional[Branch] = None) -> float:
    """Total continuous-time duration of the auxiliary plan (inf-free)."""
    if branch is None:
        branch = best_branch(s0)
    phases = phase_plan(s0, lim, branch)
    return phases[-1].t_start
