"""Direct multiple-shooting transcription of the receding-horizon OCP.

Decision vector layout: N+1 shooting states stacked row-major, followed by
N controls,

    w = [x_0, ..., x_N, u_0, ..., u_{N-1}],    dim = 5 (N+1) + 2 N.

The nonlinear program minimizes the left-endpoint Riemann sum of the stage
cost plus the terminal cost-to-go,

    J(w) = delta * sum_k (x_k^2 + z_k^2 + theta_k^2 + vx_k^2 + vz_k^2)
         + F(r_N, theta_N, V_N),

subject to shooting defects x_{k+1} = Phi(x_k, u_k) (RK4 over the control
period), the initial-state pin, the three bilinear terminal alignment
equalities, the terminal speed-bound inequality, and the input boxes (left
to the solver as variable bounds).

Two objective flavors coexist: the exact formula, used for reporting and
derivative checks, and a smoothed twin used inside solvers, which replaces
|theta|^3 with its C2 regularization (theta^2 + mu^2)^{3/2} - mu^3 and the
terminal norms with sqrt(. + mu_n^2) so the problem stays twice
differentiable when the terminal node sits at the origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sparse

from .dynamics import DEFAULT_LIMITS, InputLimits, State, Trajectory, rk4_step_array
from .terminal_set import Branch
from .terminal_cost import terminal_cost_formula

#: C2 smoothing width for |theta|^3 inside solver objectives.
_MU_THETA = 1e-6
#: Smoothing width for the terminal norms inside the solver objective.  Wide
#: enough to keep the cost's curvature at the origin-with-pitch corner within
#: what a Newton model can represent (the true curvature blows up like
#: theta^2 / sigma2^{3/2}); the induced bias on the solver objective is a few
#: 1e-3 at most and pulls the terminal node toward the origin.
_MU_NORM_OBJ = 1e-2
#: Smoothing width for the terminal constraint rows.  Their Jacobians stay
#: bounded for any width, so this only shields 0/0 at the exact origin.
_MU_NORM_CON = 1e-8


@dataclass(frozen=True)
class OcpConfig:
    """Transcription parameters; defaults reproduce the reference setup."""

    horizon_steps: int = 61
    mpc_period: float = 0.1
    integrator_step: float = 0.1
    limits: InputLimits = field(default_factory=lambda: DEFAULT_LIMITS)
    terminal_tolerance: float = 0.0

    def __post_init__(self) -> None:
        if self.horizon_steps < 1:
            raise ValueError(f"horizon must be at least one step, got {self.horizon_steps}")
        if self.mpc_period <= 0 or self.integrator_step <= 0:
            raise ValueError("mpc_period and integrator_step must be positive")
        ratio = self.mpc_period / self.integrator_step
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"mpc_period {self.mpc_period} must be an integer multiple of "
                f"integrator_step {self.integrator_step}"
            )
        if self.terminal_tolerance < 0:
            raise ValueError("terminal_tolerance must be nonnegative")

    @property
    def substeps(self) -> int:
        return int(round(self.mpc_period / self.integrator_step))


@dataclass
class OcpSolution:
    """Trajectory-shaped view of a decision vector plus solve metadata."""

    states: np.ndarray  # (N+1, 5)
    controls: np.ndarray  # (N, 2)
    objective: float
    status: str
    violations: dict
    multipliers: Optional[np.ndarray] = None

    @property
    def first_control(self) -> np.ndarray:
        return self.controls[0]


def _rollout_kernel_py(x0: np.ndarray, U: np.ndarray, h: float, substeps: int) -> np.ndarray:
    """Sequential RK4 rollout; scalar arithmetic keeps the hot loop cheap."""
    n = U.shape[0]
    X = np.empty((n + 1, 5))
    X[0] = x0
    x = x0[0]
    z = x0[1]
    th = x0[2]
    vx = x0[3]
    vz = x0[4]
    for k in range(n):
        a = U[k, 0]
        om = U[k, 1]
        for _ in range(substeps):
            # RK4 stages written out; omega is constant so theta stages are exact
            s1, c1 = math.sin(th), math.cos(th)
            th2 = th + 0.5 * h * om
            s2, c2 = math.sin(th2), math.cos(th2)
            th4 = th + h * om
            s4, c4 = math.sin(th4), math.cos(th4)
            ax1, az1 = -a * s1, a * c1
            ax2, az2 = -a * s2, a * c2
            ax4, az4 = -a * s4, a * c4
            # velocity increments (k2 == k3 for the velocity components)
            dvx = (h / 6.0) * (ax1 + 4.0 * ax2 + ax4)
            dvz = (h / 6.0) * (az1 + 4.0 * az2 + az4)
            # position increments use the velocity stages
            dx = h * vx + h * h / 6.0 * (ax1 + ax2 + ax2)
            dz = h * vz + h * h / 6.0 * (az1 + az2 + az2)
            x += dx
            z += dz
            th = th4
            vx += dvx
            vz += dvz
        X[k + 1, 0] = x
        X[k + 1, 1] = z
        X[k + 1, 2] = th
        X[k + 1, 3] = vx
        X[k + 1, 4] = vz
    return X


try:  # pragma: no cover - exercised implicitly when numba is present
    import numba

    _rollout_kernel = numba.njit(cache=True)(_rollout_kernel_py)
except Exception:  # pragma: no cover
    _rollout_kernel = _rollout_kernel_py


def _rhs_jacobians(x: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """State and control Jacobians of the model right-hand side, batched."""
    n = x.shape[0]
    a = u[:, 0]
    st = np.sin(x[:, 2])
    ct = np.cos(x[:, 2])
    A = np.zeros((n, 5, 5))
    A[:, 0, 3] = 1.0
    A[:, 1, 4] = 1.0
    A[:, 3, 2] = -a * ct
    A[:, 4, 2] = -a * st
    B = np.zeros((n, 5, 2))
    B[:, 2, 1] = 1.0
    B[:, 3, 0] = -st
    B[:, 4, 0] = ct
    return A, B


def _rk4_with_sensitivities(
    x: np.ndarray, u: np.ndarray, h: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One RK4 step and its exact derivatives w.r.t. state and control."""
    from .dynamics import rhs_array

    n = x.shape[0]
    eye = np.broadcast_to(np.eye(5), (n, 5, 5))

    k1 = rhs_array(x, u)
    A1, B1 = _rhs_jacobians(x, u)
    d1x, d1u = A1, B1

    x2 = x + 0.5 * h * k1
    k2 = rhs_array(x2, u)
    A2, B2 = _rhs_jacobians(x2, u)
    d2x = A2 @ (eye + 0.5 * h * d1x)
    d2u = A2 @ (0.5 * h * d1u) + B2

    x3 = x + 0.5 * h * k2
    k3 = rhs_array(x3, u)
    A3, B3 = _rhs_jacobians(x3, u)
    d3x = A3 @ (eye + 0.5 * h * d2x)
    d3u = A3 @ (0.5 * h * d2u) + B3

    x4 = x + h * k3
    k4 = rhs_array(x4, u)
    A4, B4 = _rhs_jacobians(x4, u)
    d4x = A4 @ (eye + h * d3x)
    d4u = A4 @ (h * d3u) + B4

    phi = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    px = eye + (h / 6.0) * (d1x + 2 * d2x + 2 * d3x + d4x)
    pu = (h / 6.0) * (d1u + 2 * d2u + 2 * d3u + d4u)
    return phi, px, pu


def _shooting_map(
    x: np.ndarray, u: np.ndarray, h: float, substeps: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Compose RK4 substeps over one control period with chained Jacobians."""
    phi, px, pu = _rk4_with_sensitivities(x, u, h)
    for _ in range(substeps - 1):
        phi, px_s, pu_s = _rk4_with_sensitivities(phi, u, h)
        px = px_s @ px
        pu = px_s @ pu + pu_s
    return phi, px, pu


class OcpProblem:
    """Immutable multiple-shooting NLP; evaluation is reentrant."""

    def __init__(self, x_init: np.ndarray, cfg: OcpConfig):
        self.cfg = cfg
        self.x_init = np.asarray(x_init, dtype=float).copy()
        if self.x_init.shape != (5,):
            raise ValueError(f"initial state must have 5 components, got {self.x_init.shape}")
        n = cfg.horizon_steps
        self.n_nodes = n + 1
        self.n_state_vars = 5 * (n + 1)
        self.n_control_vars = 2 * n
        self.dim = self.n_state_vars + self.n_control_vars
        self.n_defects = 5 * n
        self.n_eq = self.n_defects + 5 + 3
        self.n_ineq = 1

    # -- layout -----------------------------------------------------------
    def split(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if w.shape != (self.dim,):
            raise ValueError(f"decision vector must have length {self.dim}, got {w.shape}")
        X = w[: self.n_state_vars].reshape(self.n_nodes, 5)
        U = w[self.n_state_vars :].reshape(self.cfg.horizon_steps, 2)
        return X, U

    def pack(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(X, float).ravel(), np.asarray(U, float).ravel()])

    def control_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Box bounds over the full decision vector (states are free)."""
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        lim = self.cfg.limits
        box = np.tile([lim.a_m, lim.omega_m], self.cfg.horizon_steps)
        lo[self.n_state_vars :] = -box
        hi[self.n_state_vars :] = box
        return lo, hi

    # -- objective --------------------------------------------------------
    def _terminal_node_cost(
        self, xN: np.ndarray, mu_theta: float, mu_norm: float
    ) -> float:
        lim = self.cfg.limits
        r = math.sqrt(xN[0] ** 2 + xN[1] ** 2 + mu_norm**2)
        v = math.sqrt(xN[3] ** 2 + xN[4] ** 2 + mu_norm**2)
        theta = xN[2]
        f = float(terminal_cost_formula(r, theta, v, lim))
        if mu_theta > 0.0:
            f -= abs(theta) ** 3 / (3 * lim.omega_m)
            f += ((theta**2 + mu_theta**2) ** 1.5 - mu_theta**3) / (3 * lim.omega_m)
        return f

    def _terminal_node_gradient(
        self, xN: np.ndarray, mu_theta: float, mu_norm: float
    ) -> np.ndarray:
        lim = self.cfg.limits
        a_m, w_m = lim.a_m, lim.omega_m
        x, z, theta, vx, vz = xN
        r = math.sqrt(x * x + z * z + mu_norm * mu_norm)
        v = math.sqrt(vx * vx + vz * vz + mu_norm * mu_norm)
        sqrt2 = math.sqrt(2.0)
        sigma2 = v * v + 2.0 * a_m * r
        sigma1 = 23.0 * v * v + 40.0 * a_m * a_m + 46.0 * r * a_m
        root = math.sqrt(sigma2)
        d_r = (
            23.0 * sqrt2 * sigma2 * root / (120.0 * a_m**2)
            - 2.0 * v**3 / (3.0 * a_m**2)
            + sqrt2 * theta * theta / root
            - 2.0 * v * r / a_m
            + sqrt2 * root * sigma1 / (80.0 * a_m**2)
        )
        d_v = (
            23.0 * sqrt2 * v * sigma2 * root / (120.0 * a_m**3)
            - v * v / a_m
            - 2.0 * v**4 / (3.0 * a_m**3)
            - r * r / a_m
            - 2.0 * v * v * r / (a_m**2)
            - theta * theta * (root - sqrt2 * v) / (a_m * root)
            + sqrt2 * v * root * sigma1 / (80.0 * a_m**3)
        )
        if mu_theta > 0.0:
            d_abs3 = theta * math.sqrt(theta * theta + mu_theta * mu_theta) / w_m
        else:
            d_abs3 = math.copysign(1.0, theta) * theta * theta / w_m if theta != 0.0 else 0.0
        d_theta = d_abs3 - 2.0 * theta * (v / a_m - sqrt2 * root / a_m)
        g = np.zeros(5)
        g[0] = d_r * (x / r)
        g[1] = d_r * (z / r)
        g[2] = d_theta
        g[3] = d_v * (vx / v)
        g[4] = d_v * (vz / v)
        return g

    def objective(self, w: np.ndarray, smoothed: bool = False) -> float:
        X, _ = self.split(w)
        delta = self.cfg.mpc_period
        stage = float(np.sum(X[:-1] ** 2)) * delta
        mu_t = _MU_THETA if smoothed else 0.0
        mu_n = _MU_NORM_OBJ if smoothed else 0.0
        return stage + self._terminal_node_cost(X[-1], mu_t, mu_n)

    def objective_gradient(self, w: np.ndarray, smoothed: bool = False) -> np.ndarray:
        X, _ = self.split(w)
        delta = self.cfg.mpc_period
        g = np.zeros(self.dim)
        gx = g[: self.n_state_vars].reshape(self.n_nodes, 5)
        gx[:-1] = 2.0 * delta * X[:-1]
        mu_t = _MU_THETA if smoothed else 0.0
        # 1e-150 only shields exact zero norms from 0/0; it never perturbs values
        mu_n = _MU_NORM_OBJ if smoothed else 1e-150
        gx[-1] = self._terminal_node_gradient(X[-1], mu_t, mu_n)
        return g

    # -- constraints ------------------------------------------------------
    def _terminal_rows(self, xN: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Alignment equalities + speed bound and their Jacobian rows."""
        x, z, theta, vx, vz = xN
        st, ct = math.sin(theta), math.cos(theta)
        mu = _MU_NORM_CON
        r = math.sqrt(x * x + z * z + mu * mu)
        v = math.sqrt(vx * vx + vz * vz + mu * mu)
        a_m = self.cfg.limits.a_m

        g = np.array(
            [
                vx * ct + vz * st,
                x * ct + z * st,
                x * vx + z * vz + r * v,
                vx * vx + vz * vz - 2.0 * a_m * r,
            ]
        )
        jac = np.zeros((4, 5))
        jac[0] = [0.0, 0.0, -vx * st + vz * ct, ct, st]
        jac[1] = [ct, st, -x * st + z * ct, 0.0, 0.0]
        jac[2] = [vx + v * x / r, vz + v * z / r, 0.0, x + r * vx / v, z + r * vz / v]
        jac[3] = [-2.0 * a_m * x / r, -2.0 * a_m * z / r, 0.0, 2.0 * vx, 2.0 * vz]

        eps_f = self.cfg.terminal_tolerance
        if eps_f > 0.0:
            # dead-zone relaxation: residual counts only beyond eps_f
            for i in range(3):
                if abs(g[i]) <= eps_f:
                    g[i] = 0.0
                    jac[i] = 0.0
                else:
                    g[i] -= math.copysign(eps_f, g[i])
        return g, jac

    def _defects(self, X: np.ndarray, U: np.ndarray, with_jac: bool):
        phi, px, pu = _shooting_map(
            X[:-1], U, self.cfg.integrator_step, self.cfg.substeps
        )
        c = X[1:] - phi
        if with_jac:
            return c, px, pu
        return c, None, None

    def constraints(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Equality vector (defects, pin, alignment) and inequality (<= 0)."""
        X, U = self.split(w)
        c_def, _, _ = self._defects(X, U, with_jac=False)
        g_term, _ = self._terminal_rows(X[-1])
        eq = np.concatenate([c_def.ravel(), X[0] - self.x_init, g_term[:3]])
        ineq = g_term[3:]
        return eq, ineq

    def constraints_jacobian(self, w: np.ndarray) -> sparse.csr_matrix:
        """Sparse Jacobian of [equalities; inequality], block-banded."""
        X, U = self.split(w)
        n = self.cfg.horizon_steps
        c_def, px, pu = self._defects(X, U, with_jac=True)
        _, jac_t = self._terminal_rows(X[-1])

        rows, cols, vals = [], [], []

        def add_block(r0: int, c0: int, block: np.ndarray) -> None:
            br, bc = block.shape
            rr, cc = np.meshgrid(np.arange(br), np.arange(bc), indexing="ij")
            rows.append((rr + r0).ravel())
            cols.append((cc + c0).ravel())
            vals.append(block.ravel())

        eye5 = np.eye(5)
        for k in range(n):
            r0 = 5 * k
            add_block(r0, 5 * k, -px[k])
            add_block(r0, 5 * (k + 1), eye5)
            add_block(r0, self.n_state_vars + 2 * k, -pu[k])
        add_block(self.n_defects, 0, eye5)  # initial pin
        term_col = 5 * n
        add_block(self.n_defects + 5, term_col, jac_t[:3])
        add_block(self.n_eq, term_col, jac_t[3:])

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sparse.csr_matrix(
            (vals, (rows, cols)), shape=(self.n_eq + self.n_ineq, self.dim)
        )

    def lagrangian_terms(self, w: np.ndarray):
        """Constraint values plus callables for J^T v products (solver fast path)."""
        X, U = self.split(w)
        n = self.cfg.horizon_steps
        c_def, px, pu = self._defects(X, U, with_jac=True)
        g_term, jac_t = self._terminal_rows(X[-1])
        eq = np.concatenate([c_def.ravel(), X[0] - self.x_init, g_term[:3]])
        ineq = g_term[3:]

        def jac_eq_t_dot(v: np.ndarray) -> np.ndarray:
            """J_eq^T v without assembling the sparse matrix."""
            out = np.zeros(self.dim)
            ox = out[: self.n_state_vars].reshape(self.n_nodes, 5)
            ou = out[self.n_state_vars :].reshape(n, 2)
            v_def = v[: self.n_defects].reshape(n, 5)
            ox[1:] += v_def
            ox[:-1] -= np.einsum("kij,ki->kj", px, v_def)
            ou -= np.einsum("kij,ki->kj", pu, v_def)
            ox[0] += v[self.n_defects : self.n_defects + 5]
            ox[-1] += jac_t[:3].T @ v[self.n_defects + 5 :]
            return out

        def jac_ineq_t_dot(v: np.ndarray) -> np.ndarray:
            out = np.zeros(self.dim)
            out[5 * n : 5 * n + 5] = jac_t[3] * v[0]
            return out

        return eq, ineq, jac_eq_t_dot, jac_ineq_t_dot

    def constraints_and_jacobian(
        self, w: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, sparse.csr_matrix]:
        """Constraints plus the assembled sparse Jacobian in one pass."""
        eq, ineq = self.constraints(w)
        return eq, ineq, self.constraints_jacobian(w)

    def rollout_states(self, controls: np.ndarray) -> np.ndarray:
        """Integrate the pinned initial state through the control sequence."""
        n = self.cfg.horizon_steps
        U = np.asarray(controls, float).reshape(n, 2)
        return _rollout_kernel(
            self.x_init, U, self.cfg.integrator_step, self.cfg.substeps
        )

    def shooting_sensitivities(
        self, X: np.ndarray, U: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched shooting map values and exact Jacobian blocks."""
        return _shooting_map(X[:-1], U, self.cfg.integrator_step, self.cfg.substeps)

    # -- reporting --------------------------------------------------------
    def violation_norms(self, w: np.ndarray) -> dict:
        eq, ineq = self.constraints(w)
        defects = eq[: self.n_defects]
        pin = eq[self.n_defects : self.n_defects + 5]
        align = eq[self.n_defects + 5 :]
        return {
            "max_defect": float(np.max(np.abs(defects))) if defects.size else 0.0,
            "max_pin": float(np.max(np.abs(pin))),
            "max_terminal_equality": float(np.max(np.abs(align))),
            "speed_bound_violation": float(max(0.0, ineq[0])),
            "max_equality": float(np.max(np.abs(eq))),
        }

    def solution_from(
        self,
        w: np.ndarray,
        status: str,
        multipliers: Optional[np.ndarray] = None,
    ) -> OcpSolution:
        X, U = self.split(w)
        return OcpSolution(
            states=X.copy(),
            controls=U.copy(),
            objective=self.objective(w),
            status=status,
            violations=self.violation_norms(w),
            multipliers=None if multipliers is None else multipliers.copy(),
        )

    def dump(self, path: str, w: Optional[np.ndarray] = None) -> None:
        """Write dimensions, sparsity pattern, and optionally a point to JSON."""
        jac = self.constraints_jacobian(
            w if w is not None else np.zeros(self.dim)
        )
        payload = {
            "dim": self.dim,
            "horizon_steps": self.cfg.horizon_steps,
            "n_equalities": self.n_eq,
            "n_inequalities": self.n_ineq,
            "defect_count": self.n_defects,
            "jacobian_nnz": int(jac.nnz),
            "jacobian_rows_nnz": jac.getnnz(axis=1).tolist(),
        }
        if w is not None:
            eq, ineq = self.constraints(w)
            payload["point"] = {
                "objective": self.objective(w),
                "max_equality_violation": float(np.max(np.abs(eq))),
                "inequality": ineq.tolist(),
            }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def build_ocp(
    x_init: Union[State, np.ndarray], cfg: OcpConfig, theta_hint: Optional[float] = None
) -> OcpProblem:
    """Assemble the NLP for one receding-horizon iteration.

    theta_hint unwraps the pinned initial pitch onto the 2 pi sheet closest
    to the warm start, so a wrap of the plant angle cannot tear the shooting
    trajectory apart.
    """
    arr = x_init.as_array() if isinstance(x_init, State) else np.asarray(x_init, float).copy()
    if theta_hint is not None:
        k = round((theta_hint - arr[2]) / (2.0 * math.pi))
        arr = arr.copy()
        arr[2] += 2.0 * math.pi * k
    return OcpProblem(arr, cfg)


def eval_cost_and_derivatives(
    problem: OcpProblem, w: np.ndarray, smoothed: bool = False
) -> Tuple[float, np.ndarray, np.ndarray, sparse.csr_matrix]:
    """Objective, gradient, stacked constraints, and sparse Jacobian at w.

    Raises with the offending node index if any intermediate is non-finite.
    """
    value = problem.objective(w, smoothed=smoothed)
    grad = problem.objective_gradient(w, smoothed=smoothed)
    eq, ineq = problem.constraints(w)
    cons = np.concatenate([eq, ineq])
    if not (math.isfinite(value) and np.all(np.isfinite(grad)) and np.all(np.isfinite(cons))):
        X, _ = problem.split(w)
        bad = np.nonzero(~np.isfinite(X).all(axis=1))[0]
        node = int(bad[0]) if bad.size else -1
        raise FloatingPointError(f"non-finite NLP evaluation (first bad node {node})")
    return value, grad, cons, problem.constraints_jacobian(w)


def fd_gradient(problem: OcpProblem, w: np.ndarray, eps: float = 1e-7,
                smoothed: bool = False) -> np.ndarray:
    """Dense central-difference objective gradient (debug oracle)."""
    g = np.zeros_like(w)
    for i in range(w.size):
        wp, wm = w.copy(), w.copy()
        wp[i] += eps
        wm[i] -= eps
        g[i] = (problem.objective(wp, smoothed) - problem.objective(wm, smoothed)) / (2 * eps)
    return g


def aux_rollout_vector(
    x_init: State,
    cfg: OcpConfig,
    branch: Optional[Branch] = None,
) -> np.ndarray:
    """First-iteration initial guess: the auxiliary rollout packed as w.

    Simulates the auxiliary law for the horizon (choosing the cheaper
    rotation branch unless one is forced) and stacks states and controls.
    """
    from .auxiliary import best_branch, make_aux_policy
    from .dynamics import simulate

    if branch is None:
        branch = best_branch(x_init)
    horizon_time = cfg.horizon_steps * cfg.mpc_period
    traj = simulate(
        x_init,
        make_aux_policy(cfg.limits, branch, cfg.mpc_period),
        cfg.mpc_period,
        horizon_time,
    )
    problem_dims = OcpProblem(x_init.as_array(), cfg)
    return pack_trajectory(traj, problem_dims)


def pack_trajectory(traj: Trajectory, problem: OcpProblem) -> np.ndarray:
    """Stack a simulated trajectory into the decision-vector layout.

    The trajectory is truncated or padded (holding the last state, zero
    controls) to the problem horizon.  Shooting states keep the integrator's
    unwrapped continuity: wrapped angles are lifted to the nearest sheet so
    defects stay zero.
    """
    n = problem.cfg.horizon_steps
    states = np.array(traj.states[: n + 1], dtype=float, copy=True)
    controls = np.array(traj.inputs[:n], dtype=float, copy=True)
    # lift wrapped theta onto a continuous sheet
    theta = states[:, 2]
    lifted = np.unwrap(theta)
    states[:, 2] = lifted
    if len(states) < n + 1:
        pad = np.repeat(states[-1][None, :], n + 1 - len(states), axis=0)
        states = np.vstack([states, pad])
    if len(controls) < n:
        padu = np.zeros((n - len(controls), 2))
        controls = np.vstack([controls, padu]) if controls.size else padu
    return problem.pack(states, controls)


def shift_solution(sol: OcpSolution, problem: OcpProblem) -> np.ndarray:
    """Receding-horizon shift: drop the applied segment, duplicate the tail."""
    X = np.vstack([sol.states[1:], sol.states[-1]])
    U = np.vstack([sol.controls[1:], sol.controls[-1]])
    return problem.pack(X, U)


def repair_shifted_tail(w: np.ndarray, problem: OcpProblem) -> np.ndarray:
    """Replace the duplicated tail control by the in-set auxiliary law.

    The plain shift leaves the new terminal node one uncontrolled step past
    the terminal set.  When the previous terminal state is a member, steering
    the appended interval with the auxiliary controller keeps the set
    invariant, which restores feasibility of the warm start (this is the
    recursive-feasibility construction, used here numerically).
    """
    from .auxiliary import aux_control
    from .terminal_set import classify_terminal

    X, U = problem.split(w.copy())
    anchor = State.from_array(X[-2])  # previous terminal node
    membership = classify_terminal(anchor, problem.cfg.limits, tol=1e-6)
    if not membership.member:
        return w
    u_tail = aux_control(
        anchor, problem.cfg.limits, membership.branch, problem.cfg.mpc_period
    )
    U[-1] = (u_tail.a, u_tail.omega)
    xk = X[-2]
    for _ in range(problem.cfg.substeps):
        xk = rk4_step_array(xk, U[-1], problem.cfg.integrator_step)
    X[-1] = xk
    return problem.pack(X, U)


def warm_start_from(
    prev: Union[OcpSolution, Trajectory], problem: OcpProblem
) -> np.ndarray:
    """Initial decision vector from the previous solve or an auxiliary rollout."""
    if isinstance(prev, OcpSolution):
        return shift_solution(prev, problem)
    if isinstance(prev, Trajectory):
        return pack_trajectory(prev, problem)
    raise TypeError(f"cannot warm start from {type(prev).__name__}")


def shift_multipliers(multipliers: np.ndarray, problem: OcpProblem) -> np.ndarray:
    """Shift defect multipliers by one node to match a shifted warm start."""
    n = problem.cfg.horizon_steps
    out = multipliers.copy()
    lam_def = out[: problem.n_defects].reshape(n, 5)
    out[: problem.n_defects] = np.vstack([lam_def[1:], lam_def[-1]]).ravel()
    return out
