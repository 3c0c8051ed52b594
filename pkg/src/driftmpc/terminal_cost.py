"""Closed-form terminal cost, its gradient, and the quadrature oracle.

The terminal cost is the cost-to-go of the auxiliary controller: the exact
integral of the stage cost r^2 + v^2 + theta^2 along the in-set trajectory
(accelerate to t1, decelerate to rest at the origin at t2, unwind the pitch
until t3).  Written in the reduced coordinates (r, theta, v) with
sigma2 = v^2 + 2 a_m r it reads

    F = theta^2 (sqrt(2) sqrt(sigma2) - v) / a_m
      + |theta|^3 / (3 omega_m)
      + sqrt(2) sigma2^{3/2} (23 v^2 + 40 a_m^2 + 46 a_m r) / (240 a_m^3)
      - (v^3 / (3 a_m) + v r^2 / a_m + 2 v^3 r / (3 a_m^2) + 2 v^5 / (15 a_m^3))

valid on v^2 <= 2 a_m r; on the origin line (r = v = 0) it degenerates to
|theta|^3 / (3 omega_m).  The oracle in this module recomputes F by
Gauss-Legendre quadrature of the stage cost along the analytic phase
trajectories; since the integrand is polynomial of degree <= 4 per phase the
quadrature is exact up to roundoff, making it an independent check of the
closed form.

Along the auxiliary law the cost satisfies dF/dt = -(r^2 + theta^2 + v^2)
exactly (and -theta^2 on the origin line), which is the decrease condition
that makes the receding-horizon scheme stabilizing.  The module ends with a
numerical certification of those design conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .dynamics import Control, InputLimits, State
from .terminal_set import (
    Branch,
    TerminalSetState,
    TerminalSetViolation,
    classify_terminal,
)

#: Relative slack admitting solver iterates sitting on the speed bound.
_BOUND_SLACK = 1e-9

#: Gauss-Legendre nodes per phase; exact for the degree <= 4 integrand.
_QUAD_NODES = 32


@dataclass(frozen=True)
class TerminalCostValue:
    """Terminal cost, optionally with the per-phase split (f1, f2, f3, f4)."""

    f: float
    parts: Optional[Tuple[float, float, float, float]] = None


@dataclass(frozen=True)
class TerminalCostGradient:
    """Partials of F with respect to (r, theta, v) plus the helper scalars."""

    d_r: float
    d_theta: float
    d_v: float
    sigma1: float  # 23 v^2 + 40 a_m^2 + 46 r a_m
    sigma2: float  # v^2 + 2 a_m r

    def as_array(self) -> np.ndarray:
        return np.array([self.d_r, self.d_theta, self.d_v])


def _check_admissible(ts: TerminalSetState, lim: InputLimits) -> None:
    excess = ts.v * ts.v - 2.0 * lim.a_m * ts.r
    if excess > _BOUND_SLACK * max(1.0, ts.v * ts.v):
        raise TerminalSetViolation(
            f"speed bound violated: v^2 = {ts.v**2:.6g} > 2 a_m r = {2 * lim.a_m * ts.r:.6g}"
        )


def terminal_cost_formula(
    r: np.ndarray | float,
    theta: np.ndarray | float,
    v: np.ndarray | float,
    lim: InputLimits,
) -> np.ndarray | float:
    """Raw closed-form cost; smooth continuation, no admissibility check.

    Vectorized over numpy inputs.  Consumers that need the precondition
    enforced should call :func:`terminal_cost`.
    """
    a_m = lim.a_m
    sigma2 = v * v + 2.0 * a_m * r
    root = np.sqrt(sigma2)
    sigma1 = 23.0 * v * v + 40.0 * a_m * a_m + 46.0 * a_m * r
    return (
        theta * theta * (math.sqrt(2.0) * root - v) / a_m
        + np.abs(theta) ** 3 / (3.0 * lim.omega_m)
        + math.sqrt(2.0) * sigma2 * root * sigma1 / (240.0 * a_m**3)
        - (
            v**3 / (3.0 * a_m)
            + v * r * r / a_m
            + 2.0 * v**3 * r / (3.0 * a_m**2)
            + 2.0 * v**5 / (15.0 * a_m**3)
        )
    )


def terminal_cost(ts: TerminalSetState, lim: InputLimits) -> TerminalCostValue:
    """Closed-form terminal cost of an admissible reduced state.

    Requires v^2 <= 2 a_m r (or r = v = 0, where the cost is the pure pitch
    unwind |theta|^3 / (3 omega_m)); raises TerminalSetViolation otherwise.
    """
    _check_admissible(ts, lim)
    if ts.r == 0.0 and ts.v == 0.0:
        return TerminalCostValue(f=abs(ts.theta) ** 3 / (3.0 * lim.omega_m))
    return TerminalCostValue(f=float(terminal_cost_formula(ts.r, ts.theta, ts.v, lim)))


def _slide_profile(ts: TerminalSetState, lim: InputLimits):
    """Analytic (r(tau), v(tau)) polynomials per slide phase and the timings."""
    from .auxiliary import lemma1_timestamps

    stamps = lemma1_timestamps(ts.r, ts.v, ts.theta, lim)
    a_m = lim.a_m
    r0, v0 = ts.r, ts.v
    t1 = stamps.t1

    def accel(tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (r0 - v0 * tau - 0.5 * a_m * tau * tau, v0 + a_m * tau)

    def decel(tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        r = r0 - v0 * tau - a_m * t1 * t1 + 0.5 * a_m * (tau - 2.0 * t1) ** 2
        v = v0 - a_m * (tau - 2.0 * t1)
        return r, v

    return stamps, accel, decel


def terminal_cost_oracle(
    ts: TerminalSetState,
    lim: InputLimits,
    quad_step: Optional[float] = None,
) -> TerminalCostValue:
    """Recompute the terminal cost by quadrature along the analytic trajectory.

    Integrates the stage cost over [0, t1], [t1, t2], [t2, t3] with 32-node
    Gauss-Legendre panels (one panel per phase by default; quad_step caps the
    panel length).  The tail beyond t3 contributes nothing since the state
    sits at the origin.  Returns the per-phase split.
    """
    _check_admissible(ts, lim)
    if quad_step is not None and quad_step <= 0.0:
        raise ValueError(f"quad_step must be positive, got {quad_step}")
    stamps, accel, decel = _slide_profile(ts, lim)
    nodes, weights = np.polynomial.legendre.leggauss(_QUAD_NODES)

    def integrate(fun: Callable, lo: float, hi: float) -> float:
        if hi <= lo:
            return 0.0
        n_panels = 1 if quad_step is None else max(1, int(math.ceil((hi - lo) / quad_step)))
        edges = np.linspace(lo, hi, n_panels + 1)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            tau = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            total += 0.5 * (b - a) * float(np.dot(weights, fun(tau)))
        return total

    th2 = ts.theta * ts.theta

    def stage_accel(tau: np.ndarray) -> np.ndarray:
        r, v = accel(tau)
        return r * r + v * v + th2

    def stage_decel(tau: np.ndarray) -> np.ndarray:
        r, v = decel(tau)
        return r * r + v * v + th2

    def stage_rotate(tau: np.ndarray) -> np.ndarray:
        angle = ts.theta - math.copysign(lim.omega_m, ts.theta) * (tau - stamps.t2)
        return angle * angle

    f1 = integrate(stage_accel, 0.0, stamps.t1)
    f2 = integrate(stage_decel, stamps.t1, stamps.t2)
    f3 = integrate(stage_rotate, stamps.t2, stamps.t3) if ts.theta != 0.0 else 0.0
    f4 = 0.0
    return TerminalCostValue(f=f1 + f2 + f3 + f4, parts=(f1, f2, f3, f4))


def terminal_cost_gradient(
    ts: TerminalSetState, lim: InputLimits
) -> TerminalCostGradient:
    """Analytic gradient of the terminal cost in reduced coordinates.

    On the origin line (r = v = 0) the gradient degenerates to
    (0, sign(theta) theta^2 / omega_m, 0).
    """
    _check_admissible(ts, lim)
    a_m = lim.a_m
    r, theta, v = ts.r, ts.theta, ts.v
    sign_theta = math.copysign(1.0, theta) if theta != 0.0 else 0.0
    if r == 0.0 and v == 0.0:
        return TerminalCostGradient(
            d_r=0.0,
            d_theta=sign_theta * theta * theta / lim.omega_m,
            d_v=0.0,
            sigma1=40.0 * a_m * a_m,
            sigma2=0.0,
        )
    sigma2 = v * v + 2.0 * a_m * r
    sigma1 = 23.0 * v * v + 40.0 * a_m * a_m + 46.0 * r * a_m
    root = math.sqrt(sigma2)
    sqrt2 = math.sqrt(2.0)
    d_r = (
        23.0 * sqrt2 * sigma2 * root / (120.0 * a_m**2)
        - 2.0 * v**3 / (3.0 * a_m**2)
        + sqrt2 * theta * theta / root
        - 2.0 * v * r / a_m
        + sqrt2 * root * sigma1 / (80.0 * a_m**2)
    )
    d_theta = sign_theta * theta * theta / lim.omega_m - 2.0 * theta * (v / a_m - sqrt2 * root / a_m)
    d_v = (
        23.0 * sqrt2 * v * sigma2 * root / (120.0 * a_m**3)
        - v * v / a_m
        - 2.0 * v**4 / (3.0 * a_m**3)
        - r * r / a_m
        - 2.0 * v * v * r / (a_m**2)
        - theta * theta * (root - sqrt2 * v) / (a_m * root)
        + sqrt2 * v * root * sigma1 / (80.0 * a_m**3)
    )
    for name, val in (("d_r", d_r), ("d_theta", d_theta), ("d_v", d_v)):
        if not math.isfinite(val):
            raise ArithmeticError(f"non-finite gradient component {name} at {ts}")
    return TerminalCostGradient(d_r=d_r, d_theta=d_theta, d_v=d_v, sigma1=sigma1, sigma2=sigma2)


def terminal_cost_time_derivative(
    ts: TerminalSetState, u: Control, lim: InputLimits
) -> float:
    """dF/dt along the forward in-set dynamics (r' = -v, theta' = omega, v' = a)."""
    grad = terminal_cost_gradient(ts, lim)
    return -ts.v * grad.d_r + u.omega * grad.d_theta + u.a * grad.d_v


def in_set_aux_control(ts: TerminalSetState, lim: InputLimits) -> Control:
    """Continuous-time auxiliary control as a function of the reduced state."""
    if ts.r == 0.0 and ts.v == 0.0:
        sign_theta = math.copysign(1.0, ts.theta) if ts.theta != 0.0 else 0.0
        return Control(0.0, -sign_theta * lim.omega_m)
    if ts.v * ts.v < 2.0 * lim.a_m * ts.r:
        return Control(lim.a_m, 0.0)
    return Control(-lim.a_m, 0.0)


def _sample_admissible(
    rng: np.random.Generator, n: int, r_range: Tuple[float, float] = (1e-3, 10.0)
) -> np.ndarray:
    """Random admissible (r, theta, v-fraction) triples, log-uniform in r."""
    r = np.exp(rng.uniform(math.log(r_range[0]), math.log(r_range[1]), n))
    theta = rng.uniform(-math.pi, math.pi, n)
    frac = rng.uniform(0.0, 1.0, n)
    return np.column_stack([r, theta, frac])


@dataclass
class ConditionReport:
    """Outcome of one certified design condition."""

    name: str
    passed: bool
    worst_residual: float
    detail: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst_residual": self.worst_residual,
            "detail": self.detail,
        }


@dataclass
class StabilityReport:
    """Machine-readable certification of the stability design conditions."""

    conditions: list
    samples: int
    seed: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "seed": self.seed,
            "passed": self.passed,
            "conditions": [c.to_dict() for c in self.conditions],
        }


def verify_stability_conditions(
    lim: InputLimits,
    samples: int = 10_000,
    seed: int = 0,
    horizon_steps: int = 61,
    step: float = 0.1,
    decrease_tolerance: float = 1e-8,
    cost_fn: Optional[Callable[[TerminalSetState, InputLimits], TerminalCostValue]] = None,
    gradient_fn: Optional[
        Callable[[TerminalSetState, InputLimits], TerminalCostGradient]
    ] = None,
) -> StabilityReport:
    """Numerically certify the five design conditions over random samples.

    Checks: the terminal set is closed and contains the origin; the stage
    cost is positive definite; the terminal cost is nonnegative with a
    gradient that stays continuous up to the braking boundary; alignment is
    reachable within the horizon (by construction: the shorter of the two
    branch rotations is at most pi/2); and the exact decrease
    dF/dt + L = 0 holds under the case-appropriate auxiliary control.

    cost_fn / gradient_fn are fault-injection hooks for testing the
    certification itself; production callers leave them at None.
    Violations produce a failing report, never an exception.
    """
    if samples <= 0:
        raise ValueError(f"samples must be positive, got {samples}")
    fcost = cost_fn or terminal_cost
    fgrad = gradient_fn or terminal_cost_gradient
    rng = np.random.default_rng(seed)
    conditions = []

    # Origin membership plus closure of the membership test.
    origin = State(0.0, 0.0, 0.0, 0.0, 0.0)
    origin_ok = classify_terminal(origin, lim).member
    origin_branch = classify_terminal(origin, lim).branch
    conditions.append(
        ConditionReport(
            name="terminal-set-origin",
            passed=origin_ok and origin_branch is Branch.ORIGIN,
            worst_residual=0.0,
            detail="origin classified as a member on the origin branch",
        )
    )

    # Stage cost positive definite.
    pts = _sample_admissible(rng, samples)
    r, theta, frac = pts[:, 0], pts[:, 1], pts[:, 2]
    v = frac * np.sqrt(2.0 * lim.a_m * r)
    stage = r * r + v * v + theta * theta
    stage_at_origin = 0.0**2 + 0.0**2 + 0.0**2
    conditions.append(
        ConditionReport(
            name="stage-cost-positive-definite",
            passed=bool(np.all(stage > 0.0)) and stage_at_origin == 0.0,
            worst_residual=float(np.min(stage)) if samples else 0.0,
            detail="L > 0 off the origin and L(0) = 0",
        )
    )

    # Terminal cost nonnegative; gradient continuous approaching the
    # braking boundary v^2 = 2 a_m r.
    worst_f = math.inf
    worst_jump = 0.0
    f_ok = True
    for i in range(min(samples, 500)):
        tsi = TerminalSetState(float(r[i]), float(theta[i]), float(v[i]))
        fi = fcost(tsi, lim).f
        worst_f = min(worst_f, fi)
        if fi < 0.0:
            f_ok = False
        boundary = TerminalSetState(
            float(r[i]), float(theta[i]), math.sqrt(2.0 * lim.a_m * r[i])
        )
        inside = TerminalSetState(boundary.r, boundary.theta, boundary.v * (1.0 - 1e-7))
        jump = float(
            np.max(np.abs(fgrad(boundary, lim).as_array() - fgrad(inside, lim).as_array()))
        )
        scale = max(1.0, float(np.max(np.abs(fgrad(boundary, lim).as_array()))))
        worst_jump = max(worst_jump, jump / scale)
    zero_f = fcost(TerminalSetState(0.0, 0.0, 0.0), lim).f
    grad_cont_ok = worst_jump <= 1e-4
    conditions.append(
        ConditionReport(
            name="terminal-cost-semidefinite-smooth",
            passed=f_ok and zero_f == 0.0 and grad_cont_ok,
            worst_residual=worst_jump,
            detail=f"min F = {worst_f:.3e}, F(0) = {zero_f:.3e}, "
            f"worst relative gradient jump at the braking boundary = {worst_jump:.3e}",
        )
    )

    # Reachability within the horizon: the closer of the two alignment
    # rotations is at most pi/2, which fits in the horizon by construction.
    reachable_angle = horizon_steps * step * lim.omega_m
    conditions.append(
        ConditionReport(
            name="terminal-set-reachable",
            passed=reachable_angle >= math.pi / 2.0,
            worst_residual=max(0.0, math.pi / 2.0 - reachable_angle),
            detail=f"horizon rotation capacity {reachable_angle:.3f} rad >= pi/2 "
            "(certified by construction, not sampled)",
        )
    )

    # Exact decrease dF/dt = -L under the three in-set control cases.
    def decrease_residual(tsi: TerminalSetState, u: Control) -> float:
        grad = fgrad(tsi, lim)
        df = -tsi.v * grad.d_r + u.omega * grad.d_theta + u.a * grad.d_v
        stage_cost = tsi.r**2 + tsi.theta**2 + tsi.v**2
        return abs(df + stage_cost)

    worst = 0.0
    violating = 0
    for i in range(samples):
        # Accelerate case: strictly below the braking parabola.
        ts_in = TerminalSetState(
            float(r[i]), float(theta[i]), float(0.999 * frac[i]) * math.sqrt(2 * lim.a_m * r[i])
        )
        res = decrease_residual(ts_in, Control(lim.a_m, 0.0))
        # Decelerate case: on the parabola.
        ts_bd = TerminalSetState(
            float(r[i]), float(theta[i]), math.sqrt(2.0 * lim.a_m * r[i])
        )
        res = max(res, decrease_residual(ts_bd, Control(-lim.a_m, 0.0)))
        # Rotate-at-origin case.
        ts_o = TerminalSetState(0.0, float(theta[i]), 0.0)
        sign_theta = math.copysign(1.0, ts_o.theta) if ts_o.theta != 0.0 else 0.0
        grad_o = fgrad(ts_o, lim)
        df_o = -sign_theta * lim.omega_m * grad_o.d_theta
        res = max(res, abs(df_o + ts_o.theta**2))
        worst = max(worst, res)
        if res > decrease_tolerance * max(1.0, stage[i]):
            violating += 1
    conditions.append(
        ConditionReport(
            name="terminal-cost-decrease",
            passed=violating == 0,
            worst_residual=worst,
            detail=f"|dF/dt + L| over the three control cases; {violating} of "
            f"{samples} samples exceeded tolerance {decrease_tolerance:g}",
        )
    )

    return StabilityReport(
        conditions=conditions,
        samples=samples,
        seed=seed,
        passed=all(c.passed for c in conditions),
    )


def verify_oracle_equivalence(
    lim: InputLimits,
    samples: int = 10_000,
    seed: int = 0,
    rel_tolerance: float = 1e-6,
) -> ConditionReport:
    """Closed form versus quadrature oracle over random admissible states."""
    rng = np.random.default_rng(seed)
    pts = _sample_admissible(rng, samples)
    worst = 0.0
    failures = 0
    for r, theta, frac in pts:
        v = frac * math.sqrt(2.0 * lim.a_m * r)
        ts = TerminalSetState(float(r), float(theta), float(v))
        closed = terminal_cost(ts, lim).f
        oracle = terminal_cost_oracle(ts, lim)
        rel = abs(closed - oracle.f) / max(1.0, oracle.f)
        worst = max(worst, rel)
        expected_f3 = abs(ts.theta) ** 3 / (3.0 * lim.omega_m)
        pitch_ok = abs(oracle.parts[2] - expected_f3) <= 1e-12 * max(1.0, expected_f3)
        if rel > rel_tolerance or not pitch_ok:
            failures += 1
    return ConditionReport(
        name="closed-form-vs-oracle",
        passed=failures == 0,
        worst_residual=worst,
        detail=f"{failures} of {samples} samples exceeded relative tolerance "
        f"{rel_tolerance:g}; pitch-unwind part checked exactly",
    )


def verify_gradient_accuracy(
    lim: InputLimits,
    samples: int = 1_000,
    seed: int = 0,
    fd_step: float = 1e-6,
    rel_tolerance: float = 1e-5,
    sigma2_floor: float = 1e-4,
) -> ConditionReport:
    """Analytic gradient versus central differences of the raw closed form."""
    rng = np.random.default_rng(seed)
    pts = _sample_admissible(rng, samples, r_range=(1e-2, 10.0))
    worst = 0.0
    failures = 0
    checked = 0
    for r, theta, frac in pts:
        v = 0.98 * frac * math.sqrt(2.0 * lim.a_m * r)
        if v * v + 2.0 * lim.a_m * r < sigma2_floor:
            continue
        checked += 1
        ts = TerminalSetState(float(r), float(theta), float(v))
        grad = terminal_cost_gradient(ts, lim).as_array()
        fd = np.array(
            [
                (terminal_cost_formula(r + fd_step, theta, v, lim)
                 - terminal_cost_formula(r - fd_step, theta, v, lim)),
                (terminal_cost_formula(r, theta + fd_step, v, lim)
                 - terminal_cost_formula(r, theta - fd_step, v, lim)),
                (terminal_cost_formula(r, theta, v + fd_step, lim)
                 - terminal_cost_formula(r, theta, v - fd_step, lim)),
            ]
        ) / (2.0 * fd_step)
        rel = float(np.max(np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))))
        worst = max(worst, rel)
        if rel > rel_tolerance:
            failures += 1
    return ConditionReport(
        name="gradient-vs-finite-differences",
        passed=failures == 0 and checked > 0,
        worst_residual=worst,
        detail=f"{failures} of {checked} checked samples exceeded relative "
        f"tolerance {rel_tolerance:g} (step {fd_step:g})",
    )
