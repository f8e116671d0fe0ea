"""Deterministic closed-loop simulator: target motion, planning, control,
input noise, logging, steady-state metrics, a cascaded PID baseline, and
latency benchmarking.

Per step: the target advances (trapezoidal integration of its scripted
velocity on the tau grid), the integral module (when enabled) shifts the
radius command, the planner emits a reference trajectory, the selected
controller computes rotor commands, zero-mean Gaussian noise is injected on
the applied input, everything is saturated to the rotor box, and the vehicle
takes one Euler step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, FaultError
from .guidance import (ImState, ReferenceTrajectory, TargetState, TrackingPattern,
                       im_update, plan_trajectory)
from .mpc import ControlDiag, LinearizedMpc, MpcConfig, NonlinearMpc
from .policy import MlpModel, mlp_forward
from .projection import build_feasible_set, project_policy_output
from .quad import QuadParams, hover_input, linearize, step_euler

CONTROLLERS = ("lmpc", "nmpc", "nn", "nn-im", "pid")


def stationary_target() -> Callable[[float], np.ndarray]:
    zero = np.zeros(3)
    return lambda t: zero


def constant_velocity(v) -> Callable[[float], np.ndarray]:
    v = np.asarray(v, dtype=float)
    return lambda t: v


def sinusoid_velocity(amp, omega, phase) -> Callable[[float], np.ndarray]:
    """Per-axis v_i(t) = amp_i * sin(omega_i * t + phase_i)."""
    amp = np.asarray(amp, dtype=float)
    omega = np.asarray(omega, dtype=float)
    phase = np.asarray(phase, dtype=float)
    return lambda t: amp * np.sin(omega * t + phase)


def default_moving_target() -> Callable[[float], np.ndarray]:
    """Benchmark drifting target: mixed slow sinusoids on all three axes."""
    return sinusoid_velocity([0.3, 0.3, 0.1], [0.01, 0.06, 0.15],
                             [np.pi / 6, np.pi / 2, 0.0])


@dataclass
class PidGains:
    """Cascaded position -> attitude -> mixer gains; tuned once, frozen."""

    kp_pos: np.ndarray = field(default_factory=lambda: np.array([1.2, 1.2, 2.5]))
    kd_pos: np.ndarray = field(default_factory=lambda: np.array([1.6, 1.6, 2.4]))
    ki_pos: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.02, 0.05]))
    kp_att: np.ndarray = field(default_factory=lambda: np.array([30.0, 30.0, 12.0]))
    kd_att: np.ndarray = field(default_factory=lambda: np.array([9.0, 9.0, 6.0]))
    tilt_max: float = np.pi / 4
    integral_max: float = 1.0


@dataclass
class Scenario:
    """Everything a closed-loop run needs; fully determined by its fields."""

    pattern: TrackingPattern = field(default_factory=TrackingPattern)
    quad: QuadParams = field(default_factory=QuadParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    controller: str = "lmpc"
    uav_position: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0, 0.0]))
    uav_yaw: float = 0.0
    target_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_velocity: Callable[[float], np.ndarray] = field(default_factory=stationary_target)
    model: MlpModel | None = None
    im: ImState | None = None
    pid: PidGains = field(default_factory=PidGains)
    noise_std: float = 0.0
    duration: float = 60.0
    metrics_window: float = 20.0
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self):
        self.uav_position = np.asarray(self.uav_position, dtype=float)
        self.target_position = np.asarray(self.target_position, dtype=float)
        if self.duration <= 0:
            raise ConfigError("duration must be > 0")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}")
        if self.controller == "nn-im" and self.im is None:
            self.im = ImState.for_pattern(self.pattern)


@dataclass
class SimRecord:
    """Uniform-grid time series of one closed-loop run."""

    t: np.ndarray
    states: np.ndarray        # (n, 12)
    targets: np.ndarray       # (n, 6): position and velocity
    inputs: np.ndarray        # (n, 4) applied rotor commands
    refs: np.ndarray          # (n, 12) first planned reference state
    range_: np.ndarray        # horizontal range to target (m)
    height: np.ndarray        # relative height (m)
    speed: np.ndarray         # horizontal relative speed (m/s)
    r_d_eff: np.ndarray       # radius command after the integral module
    solve_time: np.ndarray
    iterations: np.ndarray
    status: list
    fallback: np.ndarray
    pattern: TrackingPattern
    aborted: bool = False
    abort_reason: str | None = None

    def __len__(self):
        return self.t.size

    CSV_DIAG = ("solve_time", "iterations", "status", "fallback")

    def to_csv(self, path, meta: dict | None = None):
        state_cols = ["px", "py", "pz", "phi", "theta", "psi",
                      "vx", "vy", "vz", "dphi", "dtheta", "dpsi"]
        cols = (["t"] + state_cols + ["tx", "ty", "tz", "tvx", "tvy", "tvz"]
                + [f"u{i + 1}" for i in range(4)]
                + ["ref_px", "ref_py", "ref_pz", "ref_vx", "ref_vy", "ref_vz"]
                + ["range", "height", "speed", "r_d_eff"] + list(self.CSV_DIAG))
        lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
        lines.append(",".join(cols))
        for i in range(len(self)):
            row = [self.t[i], *self.states[i], *self.targets[i], *self.inputs[i],
                   *self.refs[i, 0:3], *self.refs[i, 6:9],
                   self.range_[i], self.height[i], self.speed[i], self.r_d_eff[i],
                   self.solve_time[i], self.iterations[i]]
            text = ",".join("%.17g" % v for v in row)
            lines.append(f"{text},{self.status[i]},{int(self.fallback[i])}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def steady_state_metrics(rec: SimRecord, window: float):
    """Mean absolute range, height, and speed deviations over the final window."""
    if rec.t.size == 0 or rec.t[-1] - rec.t[0] < window:
        raise ValueError("record shorter than the metrics window")
    mask = rec.t >= rec.t[-1] - window
    pat = rec.pattern
    range_err = float(np.mean(np.abs(rec.range_[mask] - pat.r_d)))
    height_err = float(np.mean(np.abs(rec.height[mask] - pat.z_d)))
    speed_err = float(np.mean(np.abs(rec.speed[mask] - pat.v_d)))
    return range_err, height_err, speed_err


class PidBaseline:
    """Cascaded position/attitude loops feeding the rotor mixer.

    Horizontal position errors map to desired roll/pitch through the yaw
    rotation; a PD attitude loop produces torques, and the 4x4 mixer is
    inverted exactly.  Outputs saturate to the rotor box.
    """

    def __init__(self, gains: PidGains, params: QuadParams):
        self.gains = gains
        self.params = params
        self.integral = np.zeros(3)
        # mixer: rows are (total thrust, torque_x, torque_y, torque_z)
        p = params
        mix = np.array([
            [p.l_c, p.l_c, p.l_c, p.l_c],
            [0.0, -p.l * p.l_c, 0.0, p.l * p.l_c],
            [-p.l * p.l_c, 0.0, p.l * p.l_c, 0.0],
            [-p.d_c, p.d_c, -p.d_c, p.d_c],
        ])
        self._mix_inv = np.linalg.inv(mix)

    def reset(self):
        self.integral = np.zeros(3)

    def control(self, x, ref):
        t0 = time.perf_counter()
        g = self.gains
        p = self.params
        xv = x if isinstance(x, np.ndarray) else x.as_vector()
        states = ref.states if isinstance(ref, ReferenceTrajectory) else np.asarray(ref)
        e_pos = states[0, 0:3] - xv[0:3]
        e_vel = states[0, 6:9] - xv[6:9]
        self.integral = np.clip(self.integral + p.tau * e_pos,
                                -g.integral_max, g.integral_max)
        a_des = g.kp_pos * e_pos + g.kd_pos * e_vel + g.ki_pos * self.integral

        thrust = p.m * (p.g + a_des[2]) / max(np.cos(xv[3]) * np.cos(xv[4]), 0.5)
        thrust = max(thrust, 0.1 * p.m * p.g)
        psi = xv[5]
        # desired tilt from horizontal acceleration demand, in the yawed frame
        phi_des = np.clip((a_des[0] * np.sin(psi) - a_des[1] * np.cos(psi)) * p.m / thrust,
                          -g.tilt_max, g.tilt_max)
        theta_des = np.clip((a_des[0] * np.cos(psi) + a_des[1] * np.sin(psi)) * p.m / thrust,
                            -g.tilt_max, g.tilt_max)
        eta_des = np.array([phi_des, theta_des, 0.0])
        torque = p.inertia * (g.kp_att * (eta_des - xv[3:6]) - g.kd_att * xv[9:12])

        u = self._mix_inv @ np.concatenate([[thrust], torque])
        u = np.clip(u, 0.0, p.u_max)
        return u, ControlDiag(solve_time=time.perf_counter() - t0, status="pid")


class NetworkPolicy:
    """Distilled controller: normalize-and-forward, then project the output
    onto the one-step feasible set built at the current linearization."""

    def __init__(self, model: MlpModel, params: QuadParams, angle_limit: float,
                 u_max: float, sweeps: int = 3, project: bool = True):
        self.model = model
        self.params = params
        self.angle_limit = angle_limit
        self.u_max = u_max
        self.sweeps = sweeps
        self.project = project
        self.u_prev = hover_input(params)

    def reset(self):
        self.u_prev = hover_input(self.params)

    def control(self, x, ref):
        t0 = time.perf_counter()
        xv = x if isinstance(x, np.ndarray) else x.as_vector()
        states = ref.states if isinstance(ref, ReferenceTrajectory) else np.asarray(ref)
        s = np.concatenate([xv, states[0, 0:3], states[0, 6:9]])
        u_hat = mlp_forward(self.model, s)
        if self.project:
            lin = linearize(xv, self.u_prev, self.params)
            fs = build_feasible_set(lin, xv, self.angle_limit, self.u_max)
            u, info = project_policy_output(u_hat, fs, self.sweeps)
            diag = ControlDiag(solve_time=time.perf_counter() - t0,
                               iterations=self.sweeps,
                               status="projected" if not info["flagged"] else "proj_flagged",
                               residual=info["residual"], fallback=info["flagged"])
        else:
            u = np.clip(u_hat, 0.0, self.u_max)
            diag = ControlDiag(solve_time=time.perf_counter() - t0, status="nn")
        self.u_prev = u
        return u, diag


def make_controller(sc: Scenario):
    if sc.controller == "lmpc":
        return LinearizedMpc(sc.mpc, sc.quad)
    if sc.controller == "nmpc":
        return NonlinearMpc(sc.mpc, sc.quad)
    if sc.controller in ("nn", "nn-im"):
        if sc.model is None:
            raise ConfigError(f"controller {sc.controller!r} needs a trained model")
        return NetworkPolicy(sc.model, sc.quad, sc.mpc.angle_limit, sc.mpc.u_max)
    if sc.controller == "pid":
        return PidBaseline(sc.pid, sc.quad)
    raise ConfigError(f"unknown controller {sc.controller!r}")


def run_closed_loop(sc: Scenario) -> SimRecord:
    """Simulate the full tracking loop; identical scenarios (including the
    seed) produce bit-identical records."""
    params = sc.quad
    tau = params.tau
    n = int(round(sc.duration / tau))
    if n < 1:
        raise ConfigError("duration shorter than one sampling period")

    rng = np.random.default_rng(sc.seed)
    controller = make_controller(sc)
    im = sc.im if sc.controller == "nn-im" else None

    xv = np.zeros(12)
    xv[0:3] = sc.uav_position
    xv[5] = sc.uav_yaw
    p_o = sc.target_position.copy()
    v_of = sc.target_velocity

    rec = SimRecord(
        t=np.arange(n) * tau, states=np.zeros((n, 12)), targets=np.zeros((n, 6)),
        inputs=np.zeros((n, 4)), refs=np.zeros((n, 12)), range_=np.zeros(n),
        height=np.zeros(n), speed=np.zeros(n), r_d_eff=np.zeros(n),
        solve_time=np.zeros(n), iterations=np.zeros(n, dtype=int), status=[],
        fallback=np.zeros(n, dtype=bool), pattern=sc.pattern)

    def truncate(k, reason):
        rec.t = rec.t[:k]
        rec.states = rec.states[:k]
        rec.targets = rec.targets[:k]
        rec.inputs = rec.inputs[:k]
        rec.refs = rec.refs[:k]
        rec.range_ = rec.range_[:k]
        rec.height = rec.height[:k]
        rec.speed = rec.speed[:k]
        rec.r_d_eff = rec.r_d_eff[:k]
        rec.solve_time = rec.solve_time[:k]
        rec.iterations = rec.iterations[:k]
        rec.fallback = rec.fallback[:k]
        rec.aborted = True
        rec.abort_reason = reason
        return rec

    for k in range(n):
        t = k * tau
        if not (abs(xv[3]) < np.pi / 2 and abs(xv[4]) < np.pi / 2):
            return truncate(k, f"attitude invariant violated at t={t:.2f}s")
        v_o = v_of(t)
        rel = xv[0:3] - p_o
        r_meas = float(np.hypot(rel[0], rel[1]))
        if im is not None:
            im, r_d_eff = im_update(im, r_meas, sc.pattern.r_d)
        else:
            r_d_eff = sc.pattern.r_d
        try:
            ref = plan_trajectory(xv[:3], TargetState(p_o, v_o), sc.pattern,
                                  r_d_eff, sc.mpc.n_p, tau)
            u_cmd, diag = controller.control(xv, ref)
        except FaultError as exc:
            return truncate(k, str(exc))
        u = u_cmd
        if sc.noise_std > 0.0:
            u = u + rng.normal(0.0, sc.noise_std, size=4)
        u = np.clip(u, 0.0, params.u_max)

        rec.states[k] = xv
        rec.targets[k, 0:3] = p_o
        rec.targets[k, 3:6] = v_o
        rec.inputs[k] = u
        rec.refs[k] = ref.states[0]
        rec.range_[k] = r_meas
        rec.height[k] = rel[2]
        rec.speed[k] = float(np.hypot(xv[6] - v_o[0], xv[7] - v_o[1]))
        rec.r_d_eff[k] = r_d_eff
        rec.solve_time[k] = diag.solve_time
        rec.iterations[k] = diag.iterations
        rec.status.append(diag.status)
        rec.fallback[k] = diag.fallback

        try:
            xv = step_euler(xv, u, params)
        except FaultError as exc:
            rec.status[-1] = "fault"
            return truncate(k + 1, str(exc))
        if hasattr(controller, "u_prev"):
            controller.u_prev = u  # linearization memory follows the applied input
        p_o = p_o + 0.5 * tau * (v_o + v_of(t + tau))
    return rec


def summary(rec: SimRecord, sc: Scenario) -> dict:
    """JSON-ready digest of a run: metrics, diagnostics, abort state."""
    out = {
        "name": sc.name,
        "controller": sc.controller,
        "steps": len(rec),
        "aborted": rec.aborted,
        "abort_reason": rec.abort_reason,
        "fallback_steps": int(rec.fallback.sum()),
        "mean_solve_time": float(rec.solve_time.mean()) if len(rec) else None,
    }
    window = min(sc.metrics_window, rec.t[-1] - rec.t[0]) if len(rec) > 1 else None
    if not rec.aborted and window and window > 0:
        r_err, z_err, v_err = steady_state_metrics(rec, window)
        out["metrics"] = {"range_err": r_err, "height_err": z_err,
                          "speed_err": v_err, "window": window}
    return out


def bench_latency(controllers: dict, probes, n_calls: int) -> dict:
    """Median and p95 wall-clock latency per controller on identical states.

    Each controller is warmed up on the first probe, then timed on n_calls
    (state, reference) probes cycled in order.  n_calls = 0 gives {}.
    """
    if n_calls <= 0 or not probes:
        return {}
    table = {}
    for name, ctrl in controllers.items():
        if hasattr(ctrl, "reset"):
            ctrl.reset()
        ctrl.control(*probes[0])  # warm-up, untimed
        times = np.empty(n_calls)
        for i in range(n_calls):
            x, ref = probes[i % len(probes)]
            t0 = time.perf_counter()
            ctrl.control(x, ref)
            times[i] = time.perf_counter() - t0
        table[name] = {"median": float(np.median(times)),
                       "p95": float(np.quantile(times, 0.95)),
                       "mean": float(times.mean()), "n": n_calls}
    return table


def make_probes(sc: Scenario, n_probes: int = 20):
    """States and references sampled from an LMPC run of the scenario, for
    benchmarking different controllers on identical inputs."""
    probe_sc = Scenario(pattern=sc.pattern, quad=sc.quad, mpc=sc.mpc,
                        controller="lmpc", uav_position=sc.uav_position,
                        uav_yaw=sc.uav_yaw, target_position=sc.target_position,
                        target_velocity=sc.target_velocity,
                        duration=max(n_probes, 2) * sc.quad.tau, seed=sc.seed,
                        name="probe")
    rec = run_closed_loop(probe_sc)
    probes = []
    for k in range(min(n_probes, len(rec))):
        tgt = TargetState(rec.targets[k, 0:3], rec.targets[k, 3:6])
        ref = plan_trajectory(rec.states[k, :3], tgt, sc.pattern, sc.pattern.r_d,
                              sc.mpc.n_p, sc.quad.tau)
        probes.append((rec.states[k], ref))
    return probes


# canonical initial states: (x, y, yaw); target at the origin
PRESETS = {
    "stationary-ne": ((5.0, 5.0), 0.0),
    "stationary-nw": ((-5.0, 5.0), -np.pi / 12),
    "stationary-sw": ((-5.0, -5.0), np.pi / 12),
    "stationary-se": ((5.0, -5.0), -np.pi / 6),
}


def preset_scenario(name: str, controller: str = "lmpc", **kwargs) -> Scenario:
    """Named benchmark scenarios: four stationary-target starts plus
    'moving' (drifting target with input noise)."""
    if name in PRESETS:
        (x, y), yaw = PRESETS[name]
        return Scenario(controller=controller, uav_position=np.array([x, y, 0.0]),
                        uav_yaw=yaw, name=name, **kwargs)
    if name == "moving":
        kwargs.setdefault("noise_std", 0.1)
        return Scenario(controller=controller,
                        uav_position=np.array([5.0, -5.0, 0.0]),
                        uav_yaw=-np.pi / 6, target_velocity=default_moving_target(),
                        name=name, **kwargs)
    raise ConfigError(f"unknown preset {name!r}; choose from "
                      f"{sorted([*PRESETS, 'moving'])}")
