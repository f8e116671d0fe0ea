"""Projection of a policy output onto the one-step feasible input polytope.

The feasible set previews roll/pitch one step ahead through the current
linearization and intersects those halfspaces with the input box; projection
is by cyclic sweeps of closed-form halfspace projections after a box clamp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quad import Linearization, _as_vector
from .mpc import angle_selector

# rows with smaller norm act on the state only, not on the input
_ZERO_ROW = 1e-12


@dataclass
class FeasibleSet:
    """Halfspaces a_j . u <= b_j plus the input box [lo, hi]^4.

    ``infeasible_preview`` marks a zero-coefficient row whose state-only
    condition already failed; projection then degrades to the box clamp.
    """

    a_rows: np.ndarray
    b_vals: np.ndarray
    lo: np.ndarray = field(default_factory=lambda: np.zeros(4))
    hi: np.ndarray = field(default_factory=lambda: 12.0 * np.ones(4))
    infeasible_preview: bool = False


def build_feasible_set(lin: Linearization, x, c: float, u_max: float) -> FeasibleSet:
    """One-step roll/pitch preview halfspaces C B u <= c - C A x plus the box.

    Rows whose input coefficients vanish are checked against the state alone:
    satisfied rows are dropped, failed rows flag the set as infeasible.
    """
    xv = _as_vector(x)
    c_sel = angle_selector()
    a_all = c_sel @ lin.b_mat
    b_all = np.full(4, c) - c_sel @ (lin.a_mat @ xv)
    keep_a, keep_b = [], []
    infeasible = False
    for a_j, b_j in zip(a_all, b_all):
        if np.linalg.norm(a_j) < _ZERO_ROW:
            if b_j < 0.0:
                infeasible = True
        else:
            keep_a.append(a_j)
            keep_b.append(b_j)
    a_rows = np.array(keep_a).reshape(-1, 4)
    b_vals = np.array(keep_b, dtype=float)
    return FeasibleSet(a_rows, b_vals, np.zeros(4), u_max * np.ones(4), infeasible)


def project_halfspace(u, a_j, b_j) -> np.ndarray:
    """Euclidean projection of u onto {v : a_j . v <= b_j}; identity if inside."""
    u = np.asarray(u, dtype=float)
    a_j = np.asarray(a_j, dtype=float)
    gap = b_j - a_j @ u
    if gap >= 0.0:
        return u
    return u + (gap / (a_j @ a_j)) * a_j


def _max_violation(u, fs: FeasibleSet) -> float:
    box = max(np.max(fs.lo - u, initial=0.0), np.max(u - fs.hi, initial=0.0))
    half = np.max(fs.a_rows @ u - fs.b_vals, initial=0.0) if fs.a_rows.size else 0.0
    return max(box, half, 0.0)


def project_policy_output(u_hat, fs: FeasibleSet, sweeps: int = 3):
    """Alternating projections: box clamp then each halfspace in row order,
    repeated ``sweeps`` times.

    Returns the final iterate and an info dict with the worst remaining
    violation; a residual above 1e-3 flags the result and falls back to the
    box-clamped value so the control loop can continue.
    """
    u = np.asarray(u_hat, dtype=float).copy()
    if fs.infeasible_preview:
        u = np.clip(u, fs.lo, fs.hi)
        return u, {"residual": _max_violation(u, fs), "flagged": True, "sweeps": 0}
    for _ in range(sweeps):
        u = np.clip(u, fs.lo, fs.hi)
        for a_j, b_j in zip(fs.a_rows, fs.b_vals):
            u = project_halfspace(u, a_j, b_j)
    residual = _max_violation(u, fs)
    flagged = residual > 1e-3
    if flagged:
        u = np.clip(u, fs.lo, fs.hi)
    return u, {"residual": residual, "flagged": flagged, "sweeps": sweeps}
