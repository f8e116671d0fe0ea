"""Dense convex QP solver: min 1/2 x'Hx + h'x  s.t.  Wx <= w.

Operator-splitting iteration (regularized KKT solve alternated with a
projection onto the inequality slack cone, dual updates, adaptive penalty)
followed by an active-set polish, plus an exhaustive active-set enumeration
oracle for testing.  Everything is deterministic: identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

SOLVED = "solved"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class QpOptions:
    eps: float = 1e-6           # absolute and relative residual tolerance
    max_iter: int = 4000
    rho0: float = 0.1           # initial penalty
    rho_min: float = 1e-4
    rho_max: float = 1e4
    sigma: float = 1e-6         # primal regularization of the KKT solve
    check_every: int = 10
    polish: bool = True
    scaling_iters: int = 10     # Ruiz equilibration passes; 0 disables
    warm_x: np.ndarray | None = None
    warm_y: np.ndarray | None = None


def _ruiz_equilibrate(h_mat, w_mat, iters):
    """Diagonal scalings d (variables) and e (constraints) driving the rows
    and columns of [[H, W'], [W, 0]] toward unit infinity norm."""
    n, m = h_mat.shape[0], w_mat.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    hs = h_mat.copy()
    ws = w_mat.copy()
    for _ in range(iters):
        col_h = np.max(np.abs(hs), axis=0) if n else np.zeros(0)
        col_w = np.max(np.abs(ws), axis=0) if m else np.zeros(n)
        norm_x = np.sqrt(np.maximum(col_h, col_w))
        norm_x[norm_x < 1e-10] = 1.0
        norm_y = np.sqrt(np.max(np.abs(ws), axis=1)) if m else np.zeros(0)
        norm_y[norm_y < 1e-10] = 1.0
        d /= norm_x
        e /= norm_y
        hs = d[:, None] * h_mat * d
        ws = (e[:, None] * w_mat) * d
    return d, e


@dataclass
class QpSolution:
    x_star: np.ndarray
    lam: np.ndarray
    status: str
    primal_res: float
    dual_res: float
    comp_res: float
    iterations: int

    def objective(self, h_mat, h_vec) -> float:
        return 0.5 * self.x_star @ h_mat @ self.x_star + h_vec @ self.x_star


def _residuals(h_mat, h_vec, w_mat, w_vec, x, y):
    if w_mat.shape[0] == 0:
        dual = np.max(np.abs(h_mat @ x + h_vec)) if x.size else 0.0
        return 0.0, dual, 0.0
    slack = w_mat @ x - w_vec
    primal = max(0.0, slack.max())
    dual = np.max(np.abs(h_mat @ x + h_vec + w_mat.T @ y))
    comp = abs(y @ slack)
    return primal, dual, comp


def _polish(h_mat, h_vec, w_mat, w_vec, x, y, eps):
    """Active-set cleanup around the splitting iterate.

    Solves the equality KKT system on the detected active set, then repairs
    it: rows with negative multipliers are dropped, violated rows are added.
    Returns None if no clean KKT point is reached within the round budget.
    """
    n, m = h_mat.shape[0], w_mat.shape[0]
    w_scale = 1.0 + np.max(np.abs(w_vec))
    slack = w_vec - w_mat @ x
    active = (y > eps * max(1.0, np.max(y, initial=0.0))) | (slack < eps * w_scale)
    idx = set(np.flatnonzero(active).tolist())

    for _ in range(3 * m + 3):
        order = sorted(idx)
        if order:
            wa = w_mat[order]
            kkt = np.block([[h_mat, wa.T], [wa, np.zeros((len(order), len(order)))]])
            rhs = np.concatenate([-h_vec, w_vec[order]])
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            x_p = sol[:n]
            lam = sol[n:]
        else:
            x_p = np.linalg.solve(h_mat, -h_vec)
            lam = np.zeros(0)
        if not np.all(np.isfinite(x_p)):
            return None
        if lam.size and lam.min() < -1e-9:
            idx.discard(order[int(np.argmin(lam))])
            continue
        viol = w_mat @ x_p - w_vec
        worst = int(np.argmax(viol)) if m else 0
        if m and viol[worst] > 1e-9 * w_scale:
            if worst in idx:
                return None
            idx.add(worst)
            continue
        y_p = np.zeros(m)
        if order:
            y_p[order] = np.maximum(lam, 0.0)
        primal, dual, comp = _residuals(h_mat, h_vec, w_mat, w_vec, x_p, y_p)
        if dual > 1e-7 * (1.0 + np.max(np.abs(h_vec), initial=0.0)):
            return None
        return x_p, y_p, primal, dual, comp
    return None


def solve(h_mat, h_vec, w_mat, w_vec, opts: QpOptions | None = None) -> QpSolution:
    """Solve the dense QP; H must be symmetric positive definite.

    Unconstrained problems are solved directly.  Otherwise the splitting
    iteration runs until both residuals pass the absolute+relative test or
    the iteration cap is hit; a dual-divergence certificate reports primal
    infeasibility.
    """
    opts = opts or QpOptions()
    h_mat = np.asarray(h_mat, dtype=float)
    h_vec = np.asarray(h_vec, dtype=float)
    w_mat = np.asarray(w_mat, dtype=float).reshape(-1, h_mat.shape[0])
    w_vec = np.asarray(w_vec, dtype=float).reshape(-1)
    n, m = h_mat.shape[0], w_mat.shape[0]

    if m == 0:
        x = np.linalg.solve(h_mat, -h_vec)
        return QpSolution(x, np.zeros(0), SOLVED, 0.0, 0.0, 0.0, 0)

    # the iteration runs on equilibrated data; residuals, the infeasibility
    # certificate, and the polish all use the original problem
    if opts.scaling_iters > 0:
        d, e = _ruiz_equilibrate(h_mat, w_mat, opts.scaling_iters)
    else:
        d, e = np.ones(n), np.ones(m)
    hs = d[:, None] * h_mat * d
    hvs = d * h_vec
    ws = (e[:, None] * w_mat) * d
    wvs = e * w_vec

    xb = np.zeros(n) if opts.warm_x is None else np.asarray(opts.warm_x, dtype=float) / d
    yb = np.zeros(m) if opts.warm_y is None else np.maximum(
        np.asarray(opts.warm_y, dtype=float), 0.0) / e
    zb = ws @ xb
    rho = opts.rho0

    def factor(rho):
        kkt = np.block([[hs + opts.sigma * np.eye(n), ws.T],
                        [ws, -np.eye(m) / rho]])
        return lu_factor(kkt)

    lu = factor(rho)
    yb_prev = yb.copy()
    status = MAX_ITER
    it = 0
    while it < opts.max_iter:
        it += 1
        rhs = np.concatenate([opts.sigma * xb - hvs, zb - yb / rho])
        sol = lu_solve(lu, rhs)
        xb = sol[:n]
        nu = sol[n:]
        zt = zb + (nu - yb) / rho
        v = zt + yb / rho
        zb = np.minimum(v, wvs)
        yb_step = rho * (v - zb) - yb_prev
        yb = rho * (v - zb)          # projection residual stays nonnegative
        if it % opts.check_every == 0 or it == opts.max_iter:
            x = d * xb
            y = e * yb
            primal, dual, comp = _residuals(h_mat, h_vec, w_mat, w_vec, x, y)
            eps_p = opts.eps * (1.0 + max(np.max(np.abs(w_mat @ x)),
                                          np.max(np.abs(zb / e))))
            eps_d = opts.eps * (1.0 + max(np.max(np.abs(h_mat @ x)),
                                          np.max(np.abs(w_mat.T @ y)),
                                          np.max(np.abs(h_vec), initial=0.0)))
            if primal <= eps_p and dual <= eps_d:
                status = SOLVED
                break
            # primal infeasibility: the dual update direction certifies an
            # empty feasible set when W'dy ~ 0 and w'dy < 0 with dy >= 0
            y_step = e * yb_step
            step_inf = np.max(np.abs(y_step))
            if step_inf > 1e-10 and np.all(y_step >= -1e-12 * step_inf):
                if (np.max(np.abs(w_mat.T @ y_step)) <= 1e-8 * step_inf
                        and w_vec @ y_step < -1e-8 * step_inf):
                    return QpSolution(x, y, INFEASIBLE, primal, dual, comp, it)
            # residual-ratio penalty adaptation
            if primal > 10.0 * dual and rho < opts.rho_max:
                rho = min(rho * 2.0, opts.rho_max)
                lu = factor(rho)
            elif dual > 10.0 * primal and rho > opts.rho_min:
                rho = max(rho / 2.0, opts.rho_min)
                lu = factor(rho)
        yb_prev = yb.copy()

    x = d * xb
    y = e * yb
    primal, dual, comp = _residuals(h_mat, h_vec, w_mat, w_vec, x, y)
    if status == SOLVED and opts.polish:
        polished = _polish(h_mat, h_vec, w_mat, w_vec, x, y, opts.eps)
        if polished is not None:
            x, y, primal, dual, comp = polished
    return QpSolution(x, y, status, primal, dual, comp, it)


def brute_force_oracle(h_mat, h_vec, w_mat, w_vec):
    """Globally solve a small QP by enumerating candidate active sets.

    Every subset of at most n constraints is solved as an equality-constrained
    KKT system; candidates must be primal feasible with nonnegative
    multipliers.  Ties are broken by least objective, then lexicographically
    smallest minimizer.  Returns None when no subset yields a feasible point.
    """
    h_mat = np.asarray(h_mat, dtype=float)
    h_vec = np.asarray(h_vec, dtype=float)
    w_mat = np.asarray(w_mat, dtype=float).reshape(-1, h_mat.shape[0])
    w_vec = np.asarray(w_vec, dtype=float).reshape(-1)
    n, m = h_mat.shape[0], w_mat.shape[0]
    if n > 8 or m > 16:
        raise ValueError("oracle is limited to n <= 8 variables and m <= 16 constraints")

    best = None
    feas_tol = 1e-9
    for size in range(0, min(n, m) + 1):
        for subset in combinations(range(m), size):
            idx = np.array(subset, dtype=int)
            if size == 0:
                x = np.linalg.solve(h_mat, -h_vec)
                lam = np.zeros(0)
            else:
                wa = w_mat[idx]
                kkt = np.block([[h_mat, wa.T], [wa, np.zeros((size, size))]])
                rhs = np.concatenate([-h_vec, w_vec[idx]])
                try:
                    sol = np.linalg.solve(kkt, rhs)
                except np.linalg.LinAlgError:
                    continue
                if not np.all(np.isfinite(sol)):
                    continue
                x = sol[:n]
                lam = sol[n:]
            if np.any(lam < -1e-9):
                continue
            if m and np.max(w_mat @ x - w_vec) > feas_tol * (1.0 + np.max(np.abs(w_vec))):
                continue
            obj = 0.5 * x @ h_mat @ x + h_vec @ x
            if best is None or obj < best[0] - 1e-12:
                best = (obj, x)
            elif abs(obj - best[0]) <= 1e-12:
                for a, b in zip(x, best[1]):
                    if a < b - 1e-15:
                        best = (obj, x)
                        break
                    if a > b + 1e-15:
                        break
    return None if best is None else best[1]
