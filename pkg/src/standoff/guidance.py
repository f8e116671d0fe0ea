"""Lyapunov guidance vector field, trajectory planner, and the range-bias integrator.

The planar field drives the vehicle onto a circle of radius ``r_d`` around the
target at constant speed ``v_d``; the integer exponent ``beta`` tunes how fast
the radius converges (larger is faster).  The planner rolls the field forward
to produce reference states for the MPC, and the integral module shifts the
commanded radius to cancel constant steady-state range bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GuidanceSingularityError

# below this horizontal range the field direction is undefined
_RANGE_EPS = 1e-9

COUNTERCLOCKWISE = "counterclockwise"
CLOCKWISE = "clockwise"


@dataclass
class TrackingPattern:
    """Desired orbit: radius, relative height, speed, vertical gain, and sense."""

    r_d: float = 2.0
    z_d: float = 5.0
    v_d: float = 1.0
    v_z: float = 1.0
    beta: int = 3
    direction: str = COUNTERCLOCKWISE

    def __post_init__(self):
        if self.r_d <= 0 or self.v_d <= 0 or self.v_z <= 0:
            raise ConfigError("TrackingPattern requires r_d, v_d, v_z > 0")
        if int(self.beta) != self.beta or self.beta < 1:
            raise ConfigError(f"beta must be a positive integer, got {self.beta!r}")
        self.beta = int(self.beta)
        if self.direction not in (COUNTERCLOCKWISE, CLOCKWISE):
            raise ConfigError(f"direction must be '{COUNTERCLOCKWISE}' or '{CLOCKWISE}'")


@dataclass
class TargetState:
    """Target position and velocity (single-integrator kinematics)."""

    p_o: np.ndarray
    v_o: np.ndarray

    def __post_init__(self):
        self.p_o = np.asarray(self.p_o, dtype=float)
        self.v_o = np.asarray(self.v_o, dtype=float)
        if not (np.all(np.isfinite(self.p_o)) and np.all(np.isfinite(self.v_o))):
            raise ConfigError("target state must be finite")


@dataclass
class ReferenceTrajectory:
    """Planned states, one 12-vector per row ``[p_ref, 0, v_ref, 0]``, rows 0..N_p."""

    states: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, 0:3]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 6:9]


@dataclass
class ImState:
    """Saturated discrete integrator on the range error.

    The gains must satisfy 0 < c2 < c1 < 2*c2 so that the idealized scalar
    loop contracts; sigma is clamped so the radius shift never exceeds
    c1 * sigma_clamp.
    """

    sigma: float = 0.0
    c1: float = 0.2
    c2: float = 0.2 / 1.1
    sigma_clamp: float = np.inf

    def __post_init__(self):
        if not (0.0 < self.c2 < self.c1 < 2.0 * self.c2):
            raise ConfigError(
                f"IM gains must satisfy 0 < c2 < c1 < 2*c2, got c1={self.c1}, c2={self.c2}")
        if self.sigma_clamp <= 0:
            raise ConfigError("sigma_clamp must be > 0")
        self.sigma = float(np.clip(self.sigma, -self.sigma_clamp, self.sigma_clamp))

    @classmethod
    def for_pattern(cls, pattern: TrackingPattern, c1: float = 0.2,
                    c2: float | None = None) -> "ImState":
        """Default gains with the clamp sized so |c1*sigma| <= 0.5*r_d."""
        if c2 is None:
            c2 = c1 / 1.1
        return cls(sigma=0.0, c1=c1, c2=c2, sigma_clamp=0.5 * pattern.r_d / c1)


def scalar_field(x: float, y: float) -> float:
    """Planar field F(x, y) = x^2 + y^2 whose isolines are the candidate orbits."""
    return x * x + y * y


def unit_gradient(x: float, y: float) -> np.ndarray:
    """Unit gradient (x/r, y/r) of the scalar field; undefined at the origin."""
    r = np.hypot(x, y)
    if r < _RANGE_EPS:
        raise GuidanceSingularityError("unit gradient undefined at zero horizontal range")
    return np.array([x / r, y / r])


def sat(x: float) -> float:
    """Saturation to [-1, 1], identity inside."""
    return min(1.0, max(-1.0, x))


def lgv_velocity(rel, pat: TrackingPattern, r_d_eff: float | None = None) -> np.ndarray:
    """Guidance velocity at horizontal offset ``rel = (x, y)`` from the target.

    Returns a planar velocity of magnitude exactly ``v_d`` that spirals onto
    the circle of radius ``r_d_eff`` (default: the pattern radius) in the
    pattern's rotation sense.
    """
    x, y = float(rel[0]), float(rel[1])
    r_d = pat.r_d if r_d_eff is None else float(r_d_eff)
    if r_d <= 0:
        raise GuidanceSingularityError(f"effective radius must be > 0, got {r_d}")
    r = np.hypot(x, y)
    if r < _RANGE_EPS:
        raise GuidanceSingularityError("guidance velocity undefined at zero horizontal range")
    beta = pat.beta
    rb = r**beta
    rdb = r_d**beta
    # r^(b/2) * r_d^(b/2) avoids overflowing the intermediate product for large beta
    cross = 2.0 * r**(beta / 2.0) * r_d**(beta / 2.0)
    if pat.direction == CLOCKWISE:
        cross = -cross
    a = rb - rdb
    pre = -pat.v_d / (r * (rb + rdb))
    return pre * np.array([x * a + y * cross, y * a - x * cross])


def radial_tangential(r: float, pat: TrackingPattern):
    """Radial and tangential speed components of the field at range r.

    Satisfies r_dot^2 + r_phi_dot^2 = v_d^2; the tangential sign follows the
    pattern's rotation sense.
    """
    if r <= 0:
        raise GuidanceSingularityError("range must be > 0")
    rb = r**pat.beta
    rdb = pat.r_d**pat.beta
    r_dot = -pat.v_d * (rb - rdb) / (rb + rdb)
    r_phi_dot = 2.0 * pat.v_d * r**(pat.beta / 2.0) * pat.r_d**(pat.beta / 2.0) / (rb + rdb)
    if pat.direction == CLOCKWISE:
        r_phi_dot = -r_phi_dot
    return r_dot, r_phi_dot


def plan_trajectory(xi, tgt: TargetState, pat: TrackingPattern, r_d_eff: float,
                    horizon: int, tau: float) -> ReferenceTrajectory:
    """Roll the guidance field forward to produce reference states 0..horizon.

    The reference position starts from the vehicle position ``xi`` and is
    integrated with the field velocity plus the target's (assumed constant)
    velocity; the vertical channel approaches the desired relative height
    through a tanh so that every planned speed stays below
    sqrt(v_d^2 + v_z^2) + ||v_o||.  Euler-angle and rate blocks are zero.

    Row i pairs the position from which the i-th field step departs with the
    velocity of that step, so the sequence is an exact trajectory of the
    position integrator p(i+1) = p(i) + tau*v(i) starting at ``xi``; a plant
    holding v(i|k) = v_ref(i|k) tracks the positions with zero error.
    """
    p_ref = np.asarray(xi, dtype=float)[:3].copy()
    p_o = tgt.p_o.copy()
    v_o = tgt.v_o
    states = np.zeros((horizon + 1, 12))
    for i in range(horizon + 1):
        rel = p_ref - p_o
        v_l = lgv_velocity(rel[:2], pat, r_d_eff)
        v_ref = np.array([v_l[0], v_l[1], pat.v_z * np.tanh(pat.z_d - rel[2])]) + v_o
        states[i, 0:3] = p_ref
        states[i, 6:9] = v_ref
        p_ref = p_ref + tau * v_ref
        p_o = p_o + tau * v_o
    return ReferenceTrajectory(states)


def im_update(im: ImState, r_meas: float, r_d: float):
    """One step of the range-bias integrator.

    Returns the updated integrator state and the shifted radius command
    ``r_d_eff = r_d - c1*sigma``.
    """
    sigma = im.sigma + sat((r_meas - r_d) / im.c2)
    sigma = float(np.clip(sigma, -im.sigma_clamp, im.sigma_clamp))
    nxt = ImState(sigma=sigma, c1=im.c1, c2=im.c2, sigma_clamp=im.sigma_clamp)
    return nxt, r_d - im.c1 * sigma
