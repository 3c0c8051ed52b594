"""Nonlinear-program solvers for the shooting OCP.

The default backend runs an augmented-Lagrangian outer loop over the
terminal constraints.  Inside each outer iteration the shooting defects and
the initial pin are eliminated exactly by rolling the dynamics out from the
pinned state, which leaves the controls as the only decision variables; the
penalized objective is then minimized with a projected quasi-Newton method
honoring the input boxes: search directions come from the Gauss-Newton
curvature model (exact stage-cost and terminal-penalty curvature pulled
back through the shooting sensitivities, only the dynamics' own second
derivatives are dropped), variables pinned at an active bound are frozen,
and steps are Levenberg-damped and projected under an Armijo rule.
Gradients are exact: one adjoint sweep through the stored RK4
sensitivities per evaluation.  Multipliers update classically
(lambda += rho c) whenever the terminal residual improved enough;
otherwise the penalty grows.

The returned solution is always expressed in the full multiple-shooting
layout, with defect multipliers reconstructed from the adjoint states, so
callers see the NLP contract regardless of the elimination inside.

A second backend delegates to SLSQP on the full-space callbacks, mostly as
an independent cross-check; additional backends can be registered at
runtime.  All backends minimize the smoothed objective twin (see
:mod:`driftmpc.ocp`) and report the exact objective on the solution.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import optimize

from .ocp import OcpProblem, OcpSolution


class SolverConfigurationError(ValueError):
    """Unknown backend name or invalid solver settings."""


@dataclass(frozen=True)
class SolverConfig:
    max_outer_iterations: int = 25
    max_inner_iterations: int = 50
    constraint_tolerance: float = 1e-8
    optimality_tolerance: float = 1e-6
    initial_penalty: float = 1e4
    acceptable_violation: float = 1e-6
    penalty_growth: float = 10.0
    penalty_cap: float = 1e12
    multiplier_cap: float = 1e8
    verbose: bool = False

    def __post_init__(self) -> None:
        if min(self.constraint_tolerance, self.optimality_tolerance) <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty_growth <= 1.0:
            raise ValueError("penalty_growth must exceed 1")
        if self.initial_penalty <= 0:
            raise ValueError("initial_penalty must be positive")


@dataclass
class SolveOutcome:
    status: str  # optimal | feasible-suboptimal | infeasible | iteration-limit | numerical-failure
    outer_iterations: int
    inner_iterations: int
    constraint_violation: float
    optimality: float
    wall_time: float


def _projected_gradient_norm(
    g: np.ndarray, w: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> float:
    """Infinity norm of the gradient projected on the feasible directions."""
    pg = g.copy()
    at_lo = w <= lo + 1e-12
    at_hi = w >= hi - 1e-12
    pg[at_lo] = np.minimum(pg[at_lo], 0.0)
    pg[at_hi] = np.maximum(pg[at_hi], 0.0)
    return float(np.max(np.abs(pg))) if pg.size else 0.0


class _CondensedEvaluator:
    """Objective, terminal constraints, and adjoint gradients over controls."""

    def __init__(self, problem: OcpProblem):
        self.p = problem
        self.n = problem.cfg.horizon_steps
        self._cache_u: Optional[np.ndarray] = None
        self._cache: Optional[tuple] = None

    def _evaluate(self, u_flat: np.ndarray) -> tuple:
        if self._cache_u is not None and np.array_equal(u_flat, self._cache_u):
            return self._cache
        U = u_flat.reshape(self.n, 2)
        X = self.p.rollout_states(U)
        if not np.all(np.isfinite(X)):
            raise FloatingPointError("state rollout diverged inside the solver")
        _phi, px, pu = self.p.shooting_sensitivities(X, U)
        g_term, jac_t = self.p._terminal_rows(X[-1])
        self._cache_u = u_flat.copy()
        self._cache = (X, U, px, pu, g_term, jac_t)
        return self._cache

    def objective_value(self, u_flat: np.ndarray) -> float:
        X, U, *_ = self._evaluate(u_flat)
        return self.p.objective(self.p.pack(X, U))

    def constraints(self, u_flat: np.ndarray) -> Tuple[np.ndarray, float]:
        *_, g_term, _jac = self._evaluate(u_flat)
        return g_term[:3], float(g_term[3])

    def al_value_grad(
        self, u_flat: np.ndarray, lam: np.ndarray, lam_i: float, rho: float
    ) -> Tuple[float, np.ndarray]:
        X, U, px, pu, g_term, jac_t = self._evaluate(u_flat)
        p = self.p
        w = p.pack(X, U)
        val = p.objective(w, smoothed=True)
        eq = g_term[:3]
        g4 = float(g_term[3])
        val += float(lam @ eq) + 0.5 * rho * float(eq @ eq)
        shifted = max(0.0, lam_i + rho * g4)
        val += (shifted * shifted - lam_i * lam_i) / (2.0 * rho)

        # gradient of the smoothed objective w.r.t. every shooting state
        gx_full = p.objective_gradient(w, smoothed=True)[: p.n_state_vars].reshape(
            self.n + 1, 5
        )
        # terminal penalty pullback
        weights = np.concatenate([lam + rho * eq, [shifted]])
        gx_full[-1] += jac_t.T @ weights

        # adjoint sweep: mu_k = gx_k + P_k^T mu_{k+1}, control gradient Q_k^T mu_{k+1}
        gu = np.zeros((self.n, 2))
        mu = gx_full[-1]
        for k in range(self.n - 1, -1, -1):
            gu[k] = pu[k].T @ mu
            mu = gx_full[k] + px[k].T @ mu
        if not (math.isfinite(val) and np.all(np.isfinite(gu))):
            raise FloatingPointError("non-finite augmented-Lagrangian evaluation")
        self._last_adjoint = (gx_full, weights)
        return val, gu.ravel()

    def _terminal_al_gradient(
        self, xN: np.ndarray, lam: np.ndarray, lam_i: float, rho: float
    ) -> np.ndarray:
        """Gradient in x_N of the terminal part of the augmented Lagrangian."""
        from .ocp import _MU_NORM_OBJ, _MU_THETA

        g_term, jac_t = self.p._terminal_rows(xN)
        weights = np.concatenate(
            [lam + rho * g_term[:3], [max(0.0, lam_i + rho * g_term[3])]]
        )
        return self.p._terminal_node_gradient(xN, _MU_THETA, _MU_NORM_OBJ) + jac_t.T @ weights

    def al_hessian(
        self, u_flat: np.ndarray, lam: np.ndarray, lam_i: float, rho: float
    ) -> np.ndarray:
        """Gauss-Newton model of the condensed augmented Lagrangian.

        Exact stage and terminal-penalty curvature pulled back through the
        shooting sensitivities; only the dynamics' second derivatives are
        omitted, which vanish in the model's trust region as the defects are
        eliminated exactly.
        """
        X, U, px, pu, _g, _j = self._evaluate(u_flat)
        n, m = self.n, 2 * self.n
        # S[k] = d x_k / d u, built by forward accumulation
        S = np.zeros((n + 1, 5, m))
        for k in range(n):
            S[k + 1] = px[k] @ S[k]
            S[k + 1][:, 2 * k : 2 * k + 2] += pu[k]
        delta = self.p.cfg.mpc_period
        stacked = S[:-1].reshape((-1, m))
        h_total = 2.0 * delta * (stacked.T @ stacked)
        # exact 5x5 curvature of the terminal AL part by differencing its gradient
        eps = 1e-6
        block = np.zeros((5, 5))
        xN = X[-1]
        for i in range(5):
            xp, xm = xN.copy(), xN.copy()
            xp[i] += eps
            xm[i] -= eps
            block[:, i] = (
                self._terminal_al_gradient(xp, lam, lam_i, rho)
                - self._terminal_al_gradient(xm, lam, lam_i, rho)
            ) / (2.0 * eps)
        block = 0.5 * (block + block.T)
        h_total += S[-1].T @ block @ S[-1]
        return h_total

    def full_multipliers(
        self, u_flat: np.ndarray, lam: np.ndarray, lam_i: float
    ) -> np.ndarray:
        """Reconstruct defect and pin multipliers from the adjoint states."""
        X, U, px, pu, g_term, jac_t = self._evaluate(u_flat)
        p = self.p
        w = p.pack(X, U)
        gx_full = p.objective_gradient(w, smoothed=True)[: p.n_state_vars].reshape(
            self.n + 1, 5
        )
        gx_full[-1] += jac_t[:3].T @ lam + jac_t[3] * lam_i
        nu = np.zeros((self.n, 5))  # multiplier of defect x_{k+1} - Phi_k
        mu = gx_full[-1]
        for k in range(self.n - 1, -1, -1):
            nu[k] = -mu
            mu = gx_full[k] + px[k].T @ mu
        nu_pin = -mu
        return np.concatenate([nu.ravel(), nu_pin, lam, [lam_i]])

    def solution_vector(self, u_flat: np.ndarray) -> np.ndarray:
        X, U, *_ = self._evaluate(u_flat)
        return self.p.pack(X, U)


def _box_qp(
    hess: np.ndarray,
    grad: np.ndarray,
    lo_d: np.ndarray,
    hi_d: np.ndarray,
    gtol: float,
) -> np.ndarray:
    """Minimize g^T d + d^T H d / 2 over the box, starting from d = 0.

    Classic primal active-set iteration: solve the equality-constrained
    subproblem on the current working set, advance along the segment to the
    first blocking bound, and release wrong-signed bound multipliers one at
    a time.  Monotone and finite, so the result is an (essentially exact)
    constrained Newton step and always a descent direction for the caller.
    """
    n = grad.size
    d = np.zeros(n)
    # warm working set: directions already pinned by the caller's iterate
    at_lo = (lo_d >= -1e-14) & (grad > 0.0)
    at_hi = (hi_d <= 1e-14) & (grad < 0.0)
    for _ in range(3 * n):
        free = ~(at_lo | at_hi)
        idx = np.nonzero(free)[0]
        d_target = np.where(at_lo, lo_d, np.where(at_hi, hi_d, 0.0))
        if idx.size:
            rhs = -(grad[idx] + hess[np.ix_(idx, ~free)] @ d_target[~free])
            try:
                c = np.linalg.cholesky(hess[np.ix_(idx, idx)])
                d_target[idx] = np.linalg.solve(c.T, np.linalg.solve(c, rhs))
            except np.linalg.LinAlgError:
                d_target[idx] = np.linalg.lstsq(
                    hess[np.ix_(idx, idx)], rhs, rcond=None
                )[0]
        seg = d_target - d
        seg_norm = float(np.max(np.abs(seg)))
        if seg_norm <= 1e-13 * max(1.0, float(np.max(np.abs(d)))):
            # at the working-set minimizer: check bound multiplier signs
            z = grad + hess @ d
            bad_lo = at_lo & (z < -1e-11)
            bad_hi = at_hi & (z > 1e-11)
            cand = np.nonzero(bad_lo | bad_hi)[0]
            if cand.size == 0:
                break
            worst = cand[np.argmax(np.abs(z[cand]))]
            at_lo[worst] = False
            at_hi[worst] = False
            continue
        # largest feasible step along the segment; block the first bound hit
        beta = 1.0
        blocker = -1
        blocker_hi = False
        for i in idx:
            if seg[i] > 1e-16:
                b = (hi_d[i] - d[i]) / seg[i]
                if b < beta:
                    beta, blocker, blocker_hi = b, i, True
            elif seg[i] < -1e-16:
                b = (lo_d[i] - d[i]) / seg[i]
                if b < beta:
                    beta, blocker, blocker_hi = b, i, False
        d = d + max(beta, 0.0) * seg
        if blocker >= 0:
            if blocker_hi:
                d[blocker] = hi_d[blocker]
                at_hi[blocker] = True
            else:
                d[blocker] = lo_d[blocker]
                at_lo[blocker] = True
    return np.clip(d, lo_d, hi_d)


def _minimize_condensed_al(
    ev: _CondensedEvaluator,
    u: np.ndarray,
    lam: np.ndarray,
    lam_i: float,
    rho: float,
    lo: np.ndarray,
    hi: np.ndarray,
    gtol: float,
    maxiter: int,
) -> Tuple[np.ndarray, int]:
    """Newton descent on the condensed penalty with exact box subproblems.

    Each iteration solves the bound-constrained quadratic model exactly (the
    model's Hessian is near-exact here: only the rollout's second
    derivatives are missing), then backtracks along the feasible direction.
    Eigenvalue clamping handles the indefinite pockets of the terminal cost.
    """
    val, grad = ev.al_value_grad(u, lam, lam_i, rho)
    its = 0
    nu = 0.0
    for _ in range(maxiter):
        if _projected_gradient_norm(grad, u, lo, hi) <= gtol:
            break
        its += 1
        hess = ev.al_hessian(u, lam, lam_i, rho)
        if nu > 0.0:
            hess = hess + nu * np.eye(hess.shape[0])
        try:
            # fast path: already positive definite, use as-is
            np.linalg.cholesky(hess + 1e-10 * np.eye(hess.shape[0]))
            hess_pd = hess
        except np.linalg.LinAlgError:
            # |eigenvalue| modification: flips negative curvature without
            # drowning the soft directions the way a diagonal shift would
            evals, vecs = np.linalg.eigh(hess)
            clamped = np.maximum(np.abs(evals), 1e-9 * max(1.0, float(np.abs(evals).max())))
            hess_pd = (vecs * clamped) @ vecs.T
        d = _box_qp(hess_pd, grad, lo - u, hi - u, gtol)
        slope = float(grad @ d)
        if not np.all(np.isfinite(d)) or slope >= 0.0:
            break
        accepted = False
        t = 1.0
        while t >= 1e-10:
            u_t = u + t * d  # feasible for all t in [0, 1]
            val_t, grad_t = ev.al_value_grad(u_t, lam, lam_i, rho)
            if val_t <= val + 1e-4 * t * slope:
                u, val, grad = u_t, val_t, grad_t
                accepted = True
                nu = nu / 4.0 if nu > 1e-10 else 0.0
                break
            t *= 0.5
        if not accepted:
            if nu >= 1e10:
                break
            nu = max(4.0 * nu, 1e-6 * float(np.max(np.abs(np.diag(hess_pd)))))
    return u, its


def _solve_auglag(
    problem: OcpProblem,
    w0: np.ndarray,
    cfg: SolverConfig,
    multipliers0: Optional[np.ndarray] = None,
    log: Optional[Callable[[str], None]] = None,
) -> Tuple[OcpSolution, SolveOutcome]:
    t_start = time.perf_counter()
    n = problem.cfg.horizon_steps
    lim = problem.cfg.limits
    lo = np.tile([-lim.a_m, -lim.omega_m], n)
    hi = -lo

    _X0, U0 = problem.split(np.asarray(w0, float))
    u = np.clip(U0.ravel(), lo, hi)

    if multipliers0 is not None and multipliers0.shape == (problem.n_eq + problem.n_ineq,):
        lam = multipliers0[problem.n_defects + 5 : problem.n_eq].copy()
        lam_i = float(max(multipliers0[problem.n_eq], 0.0))
    else:
        lam = np.zeros(3)
        lam_i = 0.0

    ev = _CondensedEvaluator(problem)
    rho = cfg.initial_penalty
    inner_total = 0
    inner_gtol = max(1e-4, cfg.optimality_tolerance)

    best_u: Optional[np.ndarray] = None
    best_obj = math.inf
    accept_u: Optional[np.ndarray] = None
    accept_obj = math.inf

    def violation_of(u_cand: np.ndarray) -> float:
        eq, g4 = ev.constraints(u_cand)
        return max(float(np.max(np.abs(eq))), max(0.0, g4))

    def note_feasible(u_cand: np.ndarray) -> float:
        nonlocal best_u, best_obj, accept_u, accept_obj
        viol = violation_of(u_cand)
        if viol <= cfg.acceptable_violation:
            obj = ev.objective_value(u_cand)
            if viol <= cfg.constraint_tolerance and obj < best_obj:
                best_obj = obj
                best_u = u_cand.copy()
            if obj < accept_obj:
                accept_obj = obj
                accept_u = u_cand.copy()
        return viol

    status = "iteration-limit"
    note_feasible(u)
    # progress is judged against the previous outer iterate, not the warm
    # start, which may already be feasible
    viol = math.inf
    opt_norm = math.inf
    stall = 0
    outer = 0

    try:
        for outer in range(1, cfg.max_outer_iterations + 1):
            u_prev = u
            u, nits = _minimize_condensed_al(
                ev, u, lam, lam_i, rho, lo, hi, inner_gtol, cfg.max_inner_iterations
            )
            step = float(np.linalg.norm(u - u_prev))
            inner_total += nits

            eq, g4 = ev.constraints(u)
            viol_prev = viol
            viol = max(float(np.max(np.abs(eq))), max(0.0, g4))
            note_feasible(u)

            if log or cfg.verbose:
                line = (
                    f"iter {outer:3d}  objective {ev.objective_value(u): .6e}  "
                    f"violation {viol:.3e}  step {step:.3e}  rho {rho:.1e}"
                )
                (log or print)(line)

            if viol <= max(cfg.constraint_tolerance, 0.5 * viol_prev):
                lam = np.clip(lam + rho * eq, -cfg.multiplier_cap, cfg.multiplier_cap)
                lam_i = float(min(max(0.0, lam_i + rho * g4), cfg.multiplier_cap))
                inner_gtol = max(0.2 * inner_gtol, 0.5 * cfg.optimality_tolerance)
                stall = 0
            else:
                rho = min(rho * cfg.penalty_growth, cfg.penalty_cap)
                if rho >= cfg.penalty_cap:
                    stall += 1

            # optimality of the true Lagrangian at the updated multipliers
            _val, grad_l = ev.al_value_grad(u, lam, lam_i, 0.0 + 1e-300)
            opt_norm = _projected_gradient_norm(grad_l, u, lo, hi)
            if viol <= cfg.constraint_tolerance and opt_norm <= cfg.optimality_tolerance:
                status = "optimal"
                break
            if stall >= 3:
                status = "infeasible"
                break
    except FloatingPointError:
        status = "numerical-failure"

    # Never return a point worse than the best feasible iterate seen
    # (including the warm start): feasible descent is part of the contract.
    if best_u is not None:
        tol = 1e-12 * max(1.0, abs(best_obj))
        final_ok = (
            status == "optimal"
            and violation_of(u) <= cfg.constraint_tolerance
            and ev.objective_value(u) <= best_obj + tol
        )
        if not final_ok:
            u = best_u
            viol = violation_of(u)
            if status != "optimal":
                status = "feasible-suboptimal"
    elif accept_u is not None and status in ("iteration-limit", "infeasible"):
        # no iterate reached the strict tolerance, but one sits within the
        # acceptable band: surface it so the receding-horizon loop can keep
        # flying on it instead of falling back to the auxiliary law
        u = accept_u
        viol = violation_of(u)
        status = "feasible-suboptimal"

    multipliers = ev.full_multipliers(u, lam, lam_i)
    solution = problem.solution_from(ev.solution_vector(u), status, multipliers=multipliers)
    outcome = SolveOutcome(
        status=status,
        outer_iterations=outer,
        inner_iterations=inner_total,
        constraint_violation=viol,
        optimality=opt_norm,
        wall_time=time.perf_counter() - t_start,
    )
    return solution, outcome


def _solve_slsqp(
    problem: OcpProblem,
    w0: np.ndarray,
    cfg: SolverConfig,
    multipliers0: Optional[np.ndarray] = None,
    log: Optional[Callable[[str], None]] = None,
) -> Tuple[OcpSolution, SolveOutcome]:
    t_start = time.perf_counter()
    lo, hi = problem.control_bounds()
    w_start = np.clip(np.asarray(w0, float), lo, hi)

    constraints = [
        {
            "type": "eq",
            "fun": lambda w: problem.constraints(w)[0],
            "jac": lambda w: problem.constraints_jacobian(w)[: problem.n_eq].toarray(),
        },
        {
            "type": "ineq",
            "fun": lambda w: -problem.constraints(w)[1],
            "jac": lambda w: -problem.constraints_jacobian(w)[problem.n_eq :].toarray(),
        },
    ]
    res = optimize.minimize(
        lambda w: problem.objective(w, smoothed=True),
        w_start,
        jac=lambda w: problem.objective_gradient(w, smoothed=True),
        method="SLSQP",
        bounds=optimize.Bounds(lo, hi),
        constraints=constraints,
        options={"maxiter": 300, "ftol": 1e-12},
    )
    w = np.clip(res.x, lo, hi)
    eq, ineq = problem.constraints(w)
    viol = float(np.max(np.abs(eq)))
    if ineq.size:
        viol = max(viol, float(np.max(np.maximum(ineq, 0.0))))

    # multiplier estimate by least squares for a KKT residual report
    jac = problem.constraints_jacobian(w).toarray()
    grad = problem.objective_gradient(w, smoothed=True)
    lam, *_ = np.linalg.lstsq(jac.T, -grad, rcond=None)
    opt_norm = _projected_gradient_norm(grad + jac.T @ lam, w, lo, hi)

    if viol <= cfg.constraint_tolerance and res.success:
        status = "optimal"
    elif viol <= cfg.constraint_tolerance:
        status = "feasible-suboptimal"
    elif not np.all(np.isfinite(w)):
        status = "numerical-failure"
    else:
        status = "iteration-limit"
    solution = problem.solution_from(w, status, multipliers=lam)
    outcome = SolveOutcome(
        status=status,
        outer_iterations=1,
        inner_iterations=int(res.nit),
        constraint_violation=viol,
        optimality=opt_norm,
        wall_time=time.perf_counter() - t_start,
    )
    return solution, outcome


_BACKENDS: Dict[str, Callable] = {
    "builtin-auglag": _solve_auglag,
    "scipy-slsqp": _solve_slsqp,
}

DEFAULT_BACKEND = "builtin-auglag"


def register_backend(name: str, fn: Callable) -> None:
    """Add a solver backend implementing the evaluate-callbacks contract."""
    _BACKENDS[name] = fn


def get_backend(name: str) -> Callable:
    try:
        return _BACKENDS[name]
    except KeyError:
        raise SolverConfigurationError(
            f"unknown solver backend {name!r}; available: {sorted(_BACKENDS)}"
        ) from None


def solve(
    problem: OcpProblem,
    w0: np.ndarray,
    cfg: Optional[SolverConfig] = None,
    backend: str = DEFAULT_BACKEND,
    multipliers0: Optional[np.ndarray] = None,
    log: Optional[Callable[[str], None]] = None,
) -> Tuple[OcpSolution, SolveOutcome]:
    """Solve the OCP from the given initial decision vector."""
    if cfg is None:
        cfg = SolverConfig()
    w0 = np.asarray(w0, float)
    if w0.shape != (problem.dim,):
        raise ValueError(f"w0 must have length {problem.dim}, got {w0.shape}")
    return get_backend(backend)(problem, w0, cfg, multipliers0=multipliers0, log=log)
