"""Quadrotor rigid-body model: rotor mixing, dynamics, Euler stepping, linearization.

State layout (12-vector): ``[xi(3), eta(3), xi_dot(3), eta_dot(3)]`` with
position ``xi`` in an up-positive inertial frame, ZYX Euler angles
``eta = (phi, theta, psi)``, and their time derivatives.  Gravity points down:
``g_vec = (0, 0, -g)``.  Control inputs are the four rotor commands
``u in [0, u_max]^4``; thrust scales with ``l_c``, yaw drag with ``d_c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleHoverError, SingularAttitudeError

# attitude is treated as singular when |cos(theta)| drops below this
_COS_THETA_MIN = 1e-6


@dataclass
class QuadParams:
    """Physical parameters of the quadrotor and the sampling period.

    Defaults give a hover input of ~1.148 per rotor, comfortably inside
    the input box [0, 12].  All values can be overridden from a scenario
    config file.
    """

    m: float = 0.468            # mass (kg)
    l: float = 0.225            # arm length (m)
    l_c: float = 1.0            # thrust coefficient (N per input unit)
    d_c: float = 0.05           # yaw-drag coefficient (N*m per input unit)
    inertia: np.ndarray = field(default_factory=lambda: np.array([4.856e-3, 4.856e-3, 8.801e-3]))
    drag: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.25, 0.25]))
    g: float = 9.81             # gravitational acceleration (m/s^2), positive scalar
    u_max: float = 12.0         # input upper bound per rotor
    tau: float = 0.1            # sampling period (s)

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.drag = np.asarray(self.drag, dtype=float)
        scalars = {"m": self.m, "l": self.l, "l_c": self.l_c, "d_c": self.d_c,
                   "g": self.g, "u_max": self.u_max, "tau": self.tau}
        for name, value in scalars.items():
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigError(f"QuadParams.{name} must be finite and > 0, got {value!r}")
        for name, vec in (("inertia", self.inertia), ("drag", self.drag)):
            if vec.shape != (3,) or not np.all(np.isfinite(vec)) or np.any(vec <= 0.0):
                raise ConfigError(f"QuadParams.{name} must be 3 positive finite values")
        u_ref = self.m * self.g / (4.0 * self.l_c)
        if u_ref >= self.u_max:
            raise InfeasibleHoverError(
                f"hover input {u_ref:.4f} does not lie strictly below u_max={self.u_max}")

    @property
    def g_vec(self) -> np.ndarray:
        """Gravity vector in the up-positive inertial frame."""
        return np.array([0.0, 0.0, -self.g])


@dataclass
class UavState:
    """Position, Euler angles, and their rates; ``|phi|, |theta| < pi/2``."""

    xi: np.ndarray
    eta: np.ndarray
    xi_dot: np.ndarray
    eta_dot: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.xi_dot = np.asarray(self.xi_dot, dtype=float)
        self.eta_dot = np.asarray(self.eta_dot, dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.xi, self.eta, self.xi_dot, self.eta_dot])

    @classmethod
    def from_vector(cls, v) -> "UavState":
        v = np.asarray(v, dtype=float)
        return cls(v[0:3].copy(), v[3:6].copy(), v[6:9].copy(), v[9:12].copy())

    @classmethod
    def at_rest(cls, position, yaw: float = 0.0) -> "UavState":
        return cls(np.asarray(position, dtype=float),
                   np.array([0.0, 0.0, yaw]), np.zeros(3), np.zeros(3))

    def attitude_ok(self) -> bool:
        return abs(self.eta[0]) < np.pi / 2 and abs(self.eta[1]) < np.pi / 2


@dataclass
class Linearization:
    """Discrete-time model ``x+ ~ A x + B u + c`` around the expansion point.

    ``A = I + tau*df/dx``, ``B = tau*df/du``; the drift ``c`` collects the
    zeroth-order Taylor remainder (gravity, mostly) so the affine model is
    exact to first order.  ``c`` defaults to zero for hand-built toy models.
    """

    a_mat: np.ndarray
    b_mat: np.ndarray
    c_vec: np.ndarray | None = None

    def __post_init__(self):
        if self.c_vec is None:
            self.c_vec = np.zeros(np.atleast_2d(self.a_mat).shape[0])


def _as_vector(x) -> np.ndarray:
    if isinstance(x, UavState):
        return x.as_vector()
    return np.asarray(x, dtype=float)


def rotation_matrix(eta) -> np.ndarray:
    """ZYX body-to-inertial rotation for Euler angles (phi, theta, psi)."""
    cph, sph = np.cos(eta[0]), np.sin(eta[0])
    cth, sth = np.cos(eta[1]), np.sin(eta[1])
    cps, sps = np.cos(eta[2]), np.sin(eta[2])
    return np.array([
        [cps * cth, cps * sth * sph - sps * cph, cps * sth * cph + sps * sph],
        [sps * cth, sps * sth * sph + cps * cph, sps * sth * cph - cps * sph],
        [-sth, cth * sph, cth * cph],
    ])


def _euler_rate_matrix(eta):
    """W(eta) mapping Euler rates to body angular velocity, plus d/dphi, d/dtheta."""
    cph, sph = np.cos(eta[0]), np.sin(eta[0])
    cth, sth = np.cos(eta[1]), np.sin(eta[1])
    w = np.array([
        [1.0, 0.0, -sth],
        [0.0, cph, cth * sph],
        [0.0, -sph, cth * cph],
    ])
    dw_dphi = np.array([
        [0.0, 0.0, 0.0],
        [0.0, -sph, cth * cph],
        [0.0, -cph, -cth * sph],
    ])
    dw_dtheta = np.array([
        [0.0, 0.0, -cth],
        [0.0, 0.0, -sth * sph],
        [0.0, 0.0, -sth * cph],
    ])
    return w, dw_dphi, dw_dtheta


def _rate_matrices_batch(eta):
    """Batched W(eta) with its phi- and theta-derivatives; eta is (B, 3)."""
    b = eta.shape[0]
    cph, sph = np.cos(eta[:, 0]), np.sin(eta[:, 0])
    cth, sth = np.cos(eta[:, 1]), np.sin(eta[:, 1])
    zero = np.zeros(b)
    one = np.ones(b)
    w = np.stack([
        np.stack([one, zero, -sth], axis=1),
        np.stack([zero, cph, cth * sph], axis=1),
        np.stack([zero, -sph, cth * cph], axis=1),
    ], axis=1)
    dw_dphi = np.stack([
        np.stack([zero, zero, zero], axis=1),
        np.stack([zero, -sph, cth * cph], axis=1),
        np.stack([zero, -cph, -cth * sph], axis=1),
    ], axis=1)
    dw_dtheta = np.stack([
        np.stack([zero, zero, -cth], axis=1),
        np.stack([zero, zero, -sth * sph], axis=1),
        np.stack([zero, zero, -sth * cph], axis=1),
    ], axis=1)
    return w, dw_dphi, dw_dtheta


def _inertia_coriolis_batch(eta, eta_dot, p: QuadParams):
    """Batched J(eta) and C(eta, eta_dot) from the Christoffel symbols of J,
    so that J @ eta_ddot + C @ eta_dot matches the Lagrangian rotational
    dynamics exactly.  J depends on (phi, theta) only."""
    w, dw_dphi, dw_dtheta = _rate_matrices_batch(eta)
    iw = p.inertia[None, :, None] * w
    j_mat = np.einsum("bji,bjk->bik", w, iw)

    def sym(dw):
        s = np.einsum("bji,bjk->bik", dw, iw)
        return s + np.swapaxes(s, 1, 2)

    # dj[:, k] = dJ/d(eta_k); psi does not enter J
    dj = np.zeros((eta.shape[0], 3, 3, 3))
    dj[:, 0] = sym(dw_dphi)
    dj[:, 1] = sym(dw_dtheta)
    c_mat = 0.5 * (np.einsum("bkij,bk->bij", dj, eta_dot)
                   + np.einsum("bjik,bk->bij", dj, eta_dot)
                   - np.einsum("bijk,bk->bij", dj, eta_dot))
    return j_mat, c_mat


def euler_inertia(eta, p: QuadParams) -> np.ndarray:
    """Euler-angle inertia matrix J(eta) = W^T diag(I) W."""
    eta = np.asarray(eta, dtype=float)
    j_mat, _ = _inertia_coriolis_batch(eta[None, :], np.zeros((1, 3)), p)
    return j_mat[0]


def euler_coriolis(eta, eta_dot, p: QuadParams) -> np.ndarray:
    """Coriolis matrix of the Euler-angle rotational dynamics."""
    eta = np.asarray(eta, dtype=float)
    eta_dot = np.asarray(eta_dot, dtype=float)
    _, c_mat = _inertia_coriolis_batch(eta[None, :], eta_dot[None, :], p)
    return c_mat[0]


def thrust_torque(u, p: QuadParams):
    """Rotor mixing: total body thrust and torque for rotor commands u."""
    u = np.asarray(u, dtype=float)
    thrust = np.array([0.0, 0.0, p.l_c * u.sum()])
    torque = np.array([
        p.l * p.l_c * (-u[1] + u[3]),
        p.l * p.l_c * (-u[0] + u[2]),
        p.d_c * (-u[0] + u[1] - u[2] + u[3]),
    ])
    return thrust, torque


def hover_input(p: QuadParams) -> np.ndarray:
    """Constant rotor command holding the UAV level: u_ref = m*g/(4*l_c) per rotor."""
    u_ref = p.m * p.g / (4.0 * p.l_c)
    if u_ref >= p.u_max:
        raise InfeasibleHoverError(
            f"hover input {u_ref:.4f} does not lie strictly below u_max={p.u_max}")
    return np.full(4, u_ref)


def dynamics_batch(xs, us, p: QuadParams) -> np.ndarray:
    """Vectorized state derivative for stacked states (B, 12), inputs (B, 4).

    This is the single implementation of the model; the scalar entry point
    and the finite-difference Jacobians ride on it.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    us = np.atleast_2d(np.asarray(us, dtype=float))
    eta = xs[:, 3:6]
    xi_dot = xs[:, 6:9]
    eta_dot = xs[:, 9:12]
    cth = np.cos(eta[:, 1])
    if np.any(np.abs(cth) < _COS_THETA_MIN):
        raise SingularAttitudeError("pitch is at the Euler singularity")

    # only the thrust column of R is needed: t_b = (0, 0, l_c * sum(u))
    cph, sph = np.cos(eta[:, 0]), np.sin(eta[:, 0])
    sth = np.sin(eta[:, 1])
    cps, sps = np.cos(eta[:, 2]), np.sin(eta[:, 2])
    r_col3 = np.stack([cps * sth * cph + sps * sph,
                       sps * sth * cph - cps * sph,
                       cth * cph], axis=1)
    thrust = p.l_c * us.sum(axis=1)
    xi_dd = p.g_vec + (r_col3 * thrust[:, None] - p.drag * xi_dot) / p.m

    torque = np.stack([
        p.l * p.l_c * (-us[:, 1] + us[:, 3]),
        p.l * p.l_c * (-us[:, 0] + us[:, 2]),
        p.d_c * (-us[:, 0] + us[:, 1] - us[:, 2] + us[:, 3]),
    ], axis=1)
    j_mat, c_mat = _inertia_coriolis_batch(eta, eta_dot, p)
    rhs = torque - np.einsum("bij,bj->bi", c_mat, eta_dot)
    eta_dd = np.linalg.solve(j_mat, rhs)

    return np.concatenate([xi_dot, eta_dot, xi_dd, eta_dd], axis=1)


def continuous_dynamics(x, u, p: QuadParams) -> np.ndarray:
    """Time derivative of the 12-dim state under rotor commands u.

    Raises SingularAttitudeError when |cos(theta)| is numerically zero.
    """
    xv = _as_vector(x)
    return dynamics_batch(xv[None, :], np.asarray(u, dtype=float)[None, :], p)[0]


def step_euler(x, u, p: QuadParams):
    """One explicit Euler step of length tau; returns the same type as x."""
    xv = _as_vector(x)
    nxt = xv + p.tau * continuous_dynamics(xv, u, p)
    if isinstance(x, UavState):
        return UavState.from_vector(nxt)
    return nxt


def linearize_many(xs, us, p: QuadParams):
    """Central-difference Jacobians at several points in one vectorized pass.

    Returns stacked (N, 12, 12) A matrices, (N, 12, 4) B matrices, and
    (N, 12) drift vectors; perturbation steps are 1e-6 * max(1, |value|)
    per coordinate.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    us = np.atleast_2d(np.asarray(us, dtype=float))
    n = xs.shape[0]

    hx = 1e-6 * np.maximum(1.0, np.abs(xs))          # (n, 12)
    hu = 1e-6 * np.maximum(1.0, np.abs(us))          # (n, 4)

    # batch layout per point: 24 state perturbations, 8 input perturbations,
    # then the nominal point for the drift
    reps = 33
    xb = np.repeat(xs, reps, axis=0)
    ub = np.repeat(us, reps, axis=0)
    base = reps * np.arange(n)
    for i in range(12):
        xb[base + 2 * i, i] += hx[:, i]
        xb[base + 2 * i + 1, i] -= hx[:, i]
    for j in range(4):
        ub[base + 24 + 2 * j, j] += hu[:, j]
        ub[base + 24 + 2 * j + 1, j] -= hu[:, j]

    f = dynamics_batch(xb, ub, p).reshape(n, reps, 12)
    dfdx = np.empty((n, 12, 12))
    for i in range(12):
        dfdx[:, :, i] = (f[:, 2 * i] - f[:, 2 * i + 1]) / (2.0 * hx[:, i])[:, None]
    dfdu = np.empty((n, 12, 4))
    for j in range(4):
        dfdu[:, :, j] = (f[:, 24 + 2 * j] - f[:, 24 + 2 * j + 1]) / (2.0 * hu[:, j])[:, None]

    a_mats = np.eye(12)[None] + p.tau * dfdx
    b_mats = p.tau * dfdu
    if not (np.all(np.isfinite(a_mats)) and np.all(np.isfinite(b_mats))):
        raise FloatingPointError("non-finite entries in the linearization Jacobians")
    # drift so that x + tau*f(x, u) == A x + B u + c at each expansion point
    c_vecs = (xs + p.tau * f[:, 32]
              - np.einsum("nij,nj->ni", a_mats, xs)
              - np.einsum("nij,nj->ni", b_mats, us))
    return a_mats, b_mats, c_vecs


def linearize(x, u, p: QuadParams) -> Linearization:
    """Discrete-time Jacobians by central finite differences on the dynamics.

    A = I + tau*df/dx, B = tau*df/du, with per-coordinate step
    h = 1e-6 * max(1, |value|).
    """
    xv = _as_vector(x)
    u = np.asarray(u, dtype=float)
    a_mats, b_mats, c_vecs = linearize_many(xv[None, :], u[None, :], p)
    return Linearization(a_mats[0], b_mats[0], c_vecs[0])
