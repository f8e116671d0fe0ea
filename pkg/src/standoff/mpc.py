"""Condensed MPC for trajectory tracking: prediction matrices, constraints,
and the linearized (one QP per step) and nonlinear (SQP loop) controllers.

The QP decision variable is the stacked input deviation
``dU = col(u(0)-u_ref, ..., u(N_c-1)-u_ref)``; inputs are held constant
beyond the control horizon.  Prediction-matrix assembly is dimension-generic
so small toy systems can exercise it; the constraint assembly targets the
12-state quadrotor (roll/pitch limits plus the input box).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .errors import ConfigError, SingularAttitudeError
from .guidance import ReferenceTrajectory
from .quad import Linearization, QuadParams, continuous_dynamics, hover_input, linearize, _as_vector


@dataclass
class MpcConfig:
    """Horizons, diagonal weights, and limits of the tracking problem."""

    n_p: int = 20
    n_c: int = 10
    q_diag: np.ndarray = field(default_factory=lambda: np.r_[np.ones(9), np.zeros(3)])
    r_diag: np.ndarray = field(default_factory=lambda: 0.1 * np.ones(4))
    angle_limit: float = np.pi / 4
    u_max: float = 12.0

    def __post_init__(self):
        self.q_diag = np.asarray(self.q_diag, dtype=float)
        self.r_diag = np.asarray(self.r_diag, dtype=float)
        if not (1 <= self.n_c <= self.n_p):
            raise ConfigError(f"need 1 <= n_c <= n_p, got n_c={self.n_c}, n_p={self.n_p}")
        if np.any(self.q_diag < 0):
            raise ConfigError("state weights must be nonnegative")
        if np.any(self.r_diag <= 0):
            raise ConfigError("input weights must be positive")
        if not (0.0 < self.angle_limit < np.pi / 2):
            raise ConfigError("angle_limit must lie in (0, pi/2)")


@dataclass
class CondensedQp:
    """Matrices of the per-step QP: min 1/2 dU'H dU + h'dU s.t. W dU <= w."""

    h_mat: np.ndarray
    h_vec: np.ndarray
    w_mat: np.ndarray
    w_vec: np.ndarray


@dataclass
class ControlDiag:
    """Per-call controller diagnostics logged by the simulation harness."""

    solve_time: float = 0.0
    iterations: int = 0
    status: str = "ok"
    residual: float = 0.0
    fallback: bool = False
    cost: float = np.nan


def _ref_states(ref) -> np.ndarray:
    if isinstance(ref, ReferenceTrajectory):
        return ref.states
    return np.asarray(ref, dtype=float)


def angle_selector() -> np.ndarray:
    """Rows selecting (+phi, -phi, +theta, -theta) from the 12-dim state."""
    c = np.zeros((4, 12))
    c[0, 3] = 1.0
    c[1, 3] = -1.0
    c[2, 4] = 1.0
    c[3, 4] = -1.0
    return c


def build_offsets(lin: Linearization, ref, u_ref) -> np.ndarray:
    """Reference-induced offsets: the one-step infeasibility of the reference
    under the linearized prediction model,
    r(i+1|k) = A x_ref(i|k) + B u_ref + c - x_ref(i+1|k).

    The drift c makes a trim reference (hover state, hover input) produce
    exactly zero offsets; it vanishes for hand-built drift-free toy models.
    """
    states = _ref_states(ref)
    a, b = np.atleast_2d(lin.a_mat), np.atleast_2d(lin.b_mat)
    n_p = states.shape[0] - 1
    if n_p < 1:
        raise ValueError("reference must contain at least two states")
    bu = b @ np.atleast_1d(u_ref) + lin.c_vec
    return states[:-1] @ a.T + bu - states[1:]


def assemble_condensed(lin: Linearization, offsets, cfg: MpcConfig):
    """Stacked prediction matrices (A~, B~, D~) with input blocking.

    Row block i (1-based) predicts the state i steps ahead; the final input
    block accumulates A^m B terms for the held input beyond N_c.
    """
    a, b = np.atleast_2d(lin.a_mat), np.atleast_2d(lin.b_mat)
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    n, m = b.shape
    n_p, n_c = cfg.n_p, cfg.n_c
    if offsets.shape[0] != n_p:
        raise ValueError(f"expected {n_p} offsets, got {offsets.shape[0]}")

    # A^k for k = 0..n_p and the cumulative sums sum_{j<=k} A^j B
    apow = [np.eye(n)]
    for _ in range(n_p):
        apow.append(a @ apow[-1])
    ab = [apow[k] @ b for k in range(n_p)]
    cum_ab = [ab[0]]
    for k in range(1, n_p):
        cum_ab.append(cum_ab[-1] + ab[k])

    a_tilde = np.vstack([apow[i] for i in range(1, n_p + 1)])

    b_tilde = np.zeros((n * n_p, m * n_c))
    for i in range(1, n_p + 1):
        row = slice(n * (i - 1), n * i)
        for j in range(1, min(i, n_c) + 1):
            col = slice(m * (j - 1), m * j)
            if j < n_c:
                b_tilde[row, col] = ab[i - j]
            else:
                b_tilde[row, col] = cum_ab[i - n_c]

    d_tilde = np.zeros((n * n_p,))
    d = offsets[0]
    d_tilde[:n] = d
    for i in range(1, n_p):
        d = a @ d + offsets[i]
        d_tilde[n * i:n * (i + 1)] = d
    return a_tilde, b_tilde, d_tilde


def assemble_constraints(lin: Linearization, a_tilde, b_tilde, d_tilde, ref,
                         x0_err, cfg: MpcConfig, u_ref):
    """Stacked inequality (W, w): roll/pitch limits over the whole prediction
    horizon plus the input box on every control block."""
    states = _ref_states(ref)
    n_p, n_c = cfg.n_p, cfg.n_c
    c_sel = angle_selector()
    n = 12

    # C~ B~ and the right-hand side, 4 rows per prediction step
    cb = np.vstack([c_sel @ b_tilde[n * i:n * (i + 1)] for i in range(n_p)])
    c_bound = np.tile(np.full(4, cfg.angle_limit), n_p)
    c_ref = np.concatenate([c_sel @ states[i] for i in range(1, n_p + 1)])
    c_ax = np.concatenate([c_sel @ a_tilde[n * i:n * (i + 1)] @ x0_err for i in range(n_p)])
    c_d = np.concatenate([c_sel @ d_tilde[n * i:n * (i + 1)] for i in range(n_p)])
    rhs_angle = c_bound - c_ref - c_ax - c_d

    u_ref = np.atleast_1d(u_ref)
    m = u_ref.size
    eye = np.eye(m * n_c)
    w_mat = np.vstack([cb, eye, -eye])
    w_vec = np.concatenate([rhs_angle,
                            np.tile(cfg.u_max - u_ref, n_c),
                            np.tile(u_ref, n_c)])
    return w_mat, w_vec


def build_condensed_qp(lin: Linearization, ref, x, cfg: MpcConfig, u_ref):
    """Assemble the full per-step QP around the given linearization."""
    states = _ref_states(ref)
    xv = _as_vector(x)
    x0_err = xv - states[0]
    offsets = build_offsets(lin, states, u_ref)
    a_tilde, b_tilde, d_tilde = assemble_condensed(lin, offsets, cfg)
    q_tile = np.tile(cfg.q_diag, cfg.n_p)
    r_tile = np.tile(cfg.r_diag, cfg.n_c)
    h_mat = b_tilde.T @ (q_tile[:, None] * b_tilde) + np.diag(r_tile)
    h_mat = 0.5 * (h_mat + h_mat.T)
    h_vec = b_tilde.T @ (q_tile * (a_tilde @ x0_err + d_tilde))
    w_mat, w_vec = assemble_constraints(lin, a_tilde, b_tilde, d_tilde, states,
                                        x0_err, cfg, u_ref)
    return CondensedQp(h_mat, h_vec, w_mat, w_vec), (a_tilde, b_tilde, d_tilde, x0_err)


def expand_blocks(u_blocks, n_p: int) -> np.ndarray:
    """Expand n_c input blocks to n_p inputs by holding the last block."""
    u_blocks = np.atleast_2d(u_blocks)
    n_c = u_blocks.shape[0]
    idx = np.minimum(np.arange(n_p), n_c - 1)
    return u_blocks[idx]


def rollout(x0, u_blocks, n_p: int, params: QuadParams) -> np.ndarray:
    """Integrate the nonlinear model over the horizon; returns n_p+1 states."""
    u_seq = expand_blocks(u_blocks, n_p)
    xs = np.empty((n_p + 1, 12))
    xs[0] = _as_vector(x0)
    for i in range(n_p):
        xs[i + 1] = xs[i] + params.tau * continuous_dynamics(xs[i], u_seq[i], params)
    return xs


def rollout_cost(x0, u_blocks, ref, cfg: MpcConfig, params: QuadParams) -> float:
    """Tracking objective evaluated on the nonlinear rollout."""
    states = _ref_states(ref)
    xs = rollout(x0, u_blocks, cfg.n_p, params)
    err = xs - states[:cfg.n_p + 1]
    j_x = 0.5 * np.sum(err * (cfg.q_diag * err))
    u_seq = expand_blocks(u_blocks, cfg.n_p)
    du = u_seq - hover_input(params)
    j_u = 0.5 * np.sum(du * (cfg.r_diag * du))
    return j_x + j_u


class LinearizedMpc:
    """One condensed QP per step, linearized at the current state and the
    previously applied input.  Holds warm-start memory across calls."""

    def __init__(self, cfg: MpcConfig, params: QuadParams, qp_opts: qp.QpOptions | None = None):
        self.cfg = cfg
        self.params = params
        self.u_ref = hover_input(params)
        self.u_prev = self.u_ref.copy()
        self.qp_opts = qp_opts or qp.QpOptions()
        self.last_u_blocks = None   # predicted absolute input sequence (n_c, 4)
        self._warm_x = None
        self._warm_y = None

    def reset(self):
        self.u_prev = self.u_ref.copy()
        self.last_u_blocks = None
        self._warm_x = None
        self._warm_y = None

    def control(self, x, ref):
        t0 = time.perf_counter()
        cfg = self.cfg
        lin = linearize(x, self.u_prev, self.params)
        prob, _ = build_condensed_qp(lin, ref, x, cfg, self.u_ref)
        opts = qp.QpOptions(eps=self.qp_opts.eps, max_iter=self.qp_opts.max_iter,
                            warm_x=self._warm_x, warm_y=self._warm_y)
        sol = qp.solve(prob.h_mat, prob.h_vec, prob.w_mat, prob.w_vec, opts)
        fallback = sol.status == qp.INFEASIBLE
        if fallback:
            # clamp the unconstrained minimizer into the input box, flagged
            du = np.linalg.solve(prob.h_mat, -prob.h_vec)
            lo = np.tile(-self.u_ref, cfg.n_c)
            hi = np.tile(cfg.u_max - self.u_ref, cfg.n_c)
            du = np.clip(du, lo, hi)
        else:
            du = sol.x_star
            self._warm_x = sol.x_star
            self._warm_y = sol.lam
        self.last_u_blocks = np.clip(self.u_ref + du.reshape(cfg.n_c, 4),
                                     0.0, cfg.u_max)
        u = np.clip(self.u_ref + du[:4], 0.0, cfg.u_max)
        self.u_prev = u
        diag = ControlDiag(solve_time=time.perf_counter() - t0,
                           iterations=sol.iterations, status=sol.status,
                           residual=max(sol.primal_res, sol.dual_res),
                           fallback=fallback)
        return u, diag


class NonlinearMpc:
    """SQP on the full nonlinear tracking problem: relinearize along the
    predicted trajectory, solve the step QP, backtrack on the true cost."""

    def __init__(self, cfg: MpcConfig, params: QuadParams, max_sqp_iter: int = 20,
                 step_tol: float = 1e-6):
        self.cfg = cfg
        self.params = params
        self.u_ref = hover_input(params)
        self.max_sqp_iter = max_sqp_iter
        self.step_tol = step_tol
        self.u_seq = np.tile(self.u_ref, (cfg.n_c, 1))
        self.last_u_blocks = None   # optimized absolute input sequence (n_c, 4)

    def reset(self):
        self.u_seq = np.tile(self.u_ref, (self.cfg.n_c, 1))
        self.last_u_blocks = None

    def _cost(self, xv, u_blocks, states):
        try:
            return rollout_cost(xv, u_blocks, states, self.cfg, self.params)
        except (SingularAttitudeError, FloatingPointError):
            return np.inf

    def control(self, x, ref):
        t0 = time.perf_counter()
        cfg, params = self.cfg, self.params
        n_p, n_c = cfg.n_p, cfg.n_c
        states = _ref_states(ref)
        xv = _as_vector(x)

        u = np.clip(self.u_seq, 0.0, cfg.u_max)
        j_cur = self._cost(xv, u, states)
        if not np.isfinite(j_cur):
            u = np.tile(self.u_ref, (n_c, 1))
            j_cur = self._cost(xv, u, states)

        # weights: the held block appears n_p - n_c + 1 times in the cost
        counts = np.ones(n_c)
        counts[-1] = n_p - n_c + 1
        c_sel = angle_selector()
        status = "converged"
        it = 0
        while it < self.max_sqp_iter:
            it += 1
            xs = rollout(xv, u, n_p, params)
            u_seq = expand_blocks(u, n_p)
            a_mats, b_mats, _ = linearize_many(xs[:n_p], u_seq, params)

            # sensitivities G_i = dx(i)/dU with blocking
            g = np.zeros((n_p + 1, 12, 4 * n_c))
            h_mat = np.zeros((4 * n_c, 4 * n_c))
            h_vec = np.zeros(4 * n_c)
            w_rows = []
            w_vals = []
            for i in range(n_p):
                blk = min(i, n_c - 1)
                gi = a_mats[i] @ g[i]
                gi[:, 4 * blk:4 * blk + 4] += b_mats[i]
                g[i + 1] = gi
                err = xs[i + 1] - states[i + 1]
                h_mat += gi.T @ (cfg.q_diag[:, None] * gi)
                h_vec += gi.T @ (cfg.q_diag * err)
                w_rows.append(c_sel @ gi)
                w_vals.append(np.full(4, cfg.angle_limit) - c_sel @ xs[i + 1])
            for j in range(n_c):
                sl = slice(4 * j, 4 * j + 4)
                h_mat[sl, sl] += counts[j] * np.diag(cfg.r_diag)
                h_vec[sl] += counts[j] * cfg.r_diag * (u[j] - self.u_ref)
            h_mat = 0.5 * (h_mat + h_mat.T)

            u_flat = u.reshape(-1)
            eye = np.eye(4 * n_c)
            w_mat = np.vstack(w_rows + [eye, -eye])
            w_vec = np.concatenate(w_vals + [cfg.u_max - u_flat, u_flat])

            sol = qp.solve(h_mat, h_vec, w_mat, w_vec)
            if sol.status == qp.INFEASIBLE:
                du = np.clip(np.linalg.solve(h_mat, -h_vec), -u_flat, cfg.u_max - u_flat)
                status = "qp_infeasible"
            else:
                du = sol.x_star
            if np.linalg.norm(du) < self.step_tol:
                break
            du = du.reshape(n_c, 4)

            step = 1.0
            accepted = False
            while step >= 2.0**-12:
                cand = u + step * du
                j_new = self._cost(xv, cand, states)
                if j_new < j_cur:
                    u, j_cur = cand, j_new
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                status = "no_decrease"
                break
            if step * np.linalg.norm(du) < self.step_tol:
                break
        else:
            status = "max_iter"

        u0 = np.clip(u[0], 0.0, cfg.u_max)
        self.last_u_blocks = u.copy()
        self.u_seq = np.vstack([u[1:], u[-1:]])
        diag = ControlDiag(solve_time=time.perf_counter() - t0, iterations=it,
                           status=status, fallback=status == "qp_infeasible",
                           cost=j_cur)
        return u0, diag


def lmpc_control(x, ref, cfg: MpcConfig, params: QuadParams):
    """One-shot linearized MPC call with fresh warm-start memory."""
    return LinearizedMpc(cfg, params).control(x, ref)


def nmpc_control(x, ref, cfg: MpcConfig, params: QuadParams):
    """One-shot nonlinear MPC call with fresh warm-start memory."""
    return NonlinearMpc(cfg, params).control(x, ref)
