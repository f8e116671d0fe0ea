"""Distillation of the MPC law into a small feed-forward network.

Samples are (s, u*) pairs from closed-loop MPC runs with randomized initial
conditions, where ``s = col(x(k), p_ref(0|k), v_ref(0|k))`` (18 numbers) and
``u*`` is the applied optimal first input.  The network is a leaky-ReLU MLP
trained by mini-batch Adam on the mean squared output error; weights round
trip exactly through a versioned JSON file.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .errors import FaultError, ModelFormatError, TrainingDivergedError
from .guidance import TargetState, TrackingPattern, plan_trajectory
from .mpc import LinearizedMpc, MpcConfig, NonlinearMpc
from .quad import QuadParams, step_euler

log = logging.getLogger(__name__)

MODEL_VERSION = 1
SAMPLE_DIM = 18


@dataclass
class Dataset:
    """Stacked samples: inputs s (N, 18) and optimal first inputs u (N, 4)."""

    s: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.s = np.atleast_2d(np.asarray(self.s, dtype=float))
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if self.s.shape[0] != self.u.shape[0]:
            raise ValueError("s and u row counts differ")

    def __len__(self):
        return self.s.shape[0]

    def save_csv(self, path, meta: dict | None = None):
        header_cols = [f"s{i}" for i in range(self.s.shape[1])] + \
                      [f"u{i}" for i in range(self.u.shape[1])]
        lines = []
        for key, val in (meta or {}).items():
            lines.append(f"# {key}={val}")
        lines.append(",".join(header_cols))
        data = np.hstack([self.s, self.u])
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
            np.savetxt(fh, data, fmt="%.17g", delimiter=",")

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        with open(path) as fh:
            rows = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        if not rows:
            raise ValueError(f"{path}: no data rows")
        header = rows[0].strip().split(",")
        n_s = sum(1 for c in header if c.startswith("s"))
        data = np.loadtxt(rows[1:], delimiter=",", ndmin=2)
        return cls(data[:, :n_s], data[:, n_s:])


@dataclass
class MlpModel:
    """Leaky-ReLU MLP with a per-feature input normalizer."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    leaky_slope: float = 0.01
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None

    def __post_init__(self):
        if self.norm_mean is None:
            self.norm_mean = np.zeros(self.layer_dims[0])
        if self.norm_std is None:
            self.norm_std = np.ones(self.layer_dims[0])
        self.norm_mean = np.asarray(self.norm_mean, dtype=float)
        self.norm_std = np.asarray(self.norm_std, dtype=float)
        if not (0.0 < self.leaky_slope < 1.0):
            raise ModelFormatError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        if self.norm_mean.shape != (self.layer_dims[0],) or self.norm_std.shape != (self.layer_dims[0],):
            raise ModelFormatError("normalizer shape does not match the input layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i + 1], self.layer_dims[i]) or b.shape != (self.layer_dims[i + 1],):
                raise ModelFormatError(f"layer {i} shape mismatch with layer_dims")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelFormatError(f"layer {i} has non-finite parameters")


@dataclass
class TrainReport:
    train_loss: list[float]
    eval_loss: list[float]
    epochs: int
    batch_size: int
    seed: int
    best_epoch: int = 0


def init_model(layer_dims, seed: int = 0, leaky_slope: float = 0.01) -> MlpModel:
    """He-style seeded initialization for leaky-ReLU layers."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        scale = np.sqrt(2.0 / ((1.0 + leaky_slope**2) * fan_in))
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_dims), weights, biases, leaky_slope)


def _leaky(z, slope):
    return np.where(z >= 0.0, z, slope * z)


def mlp_forward(model: MlpModel, s) -> np.ndarray:
    """Network output for a single input vector or a batch of rows."""
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    a = np.atleast_2d(s)
    if a.shape[1] != model.layer_dims[0]:
        raise ValueError(f"input dim {a.shape[1]} != expected {model.layer_dims[0]}")
    a = (a - model.norm_mean) / model.norm_std
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w.T + b
        if i < last:
            a = _leaky(a, model.leaky_slope)
    return a[0] if single else a


def _forward_cached(model, s_norm):
    acts = [s_norm]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w.T + b
        acts.append(_leaky(z, model.leaky_slope) if i < last else z)
    return acts


def loss_and_grads(model: MlpModel, s_norm, targets):
    """Mean-squared-error loss over the batch (sum over output components,
    mean over samples) and its gradients for every weight and bias."""
    n = s_norm.shape[0]
    acts = _forward_cached(model, s_norm)
    err = acts[-1] - targets
    loss = float(np.sum(err * err) / n)
    delta = 2.0 * err / n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i]
            delta = np.where(acts[i] >= 0.0, delta, model.leaky_slope * delta)
    return loss, grads_w, grads_b


def _eval_loss(model, s_norm, targets):
    if s_norm.shape[0] == 0:
        return np.nan
    out = s_norm
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        out = out @ w.T + b
        if i < last:
            out = _leaky(out, model.leaky_slope)
    err = out - targets
    return float(np.sum(err * err) / s_norm.shape[0])


def train(dataset: Dataset, split: float = 0.9, epochs: int = 20, batch: int = 200,
          seed: int = 0, hidden=(64, 64), lr: float = 1e-3, beta1: float = 0.9,
          beta2: float = 0.999, adam_eps: float = 1e-8):
    """Fit the network to the dataset by mini-batch Adam.

    The dataset is split 90/10 into train/eval with a seeded shuffle; the
    input normalizer comes from the training split.  Returns the parameters
    with the best evaluation loss together with the per-epoch report.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    perm = rng.permutation(n)
    n_train = max(1, int(round(split * n)))
    tr, ev = perm[:n_train], perm[n_train:]

    mean = dataset.s[tr].mean(axis=0)
    std = dataset.s[tr].std(axis=0)
    std = np.maximum(std, 1e-8)

    dims = [dataset.s.shape[1], *hidden, dataset.u.shape[1]]
    model = init_model(dims, seed=seed)
    model.norm_mean = mean
    model.norm_std = std

    s_tr = (dataset.s[tr] - mean) / std
    u_tr = dataset.u[tr]
    s_ev = (dataset.s[ev] - mean) / std
    u_ev = dataset.u[ev]

    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0

    report = TrainReport([], [], epochs, batch, seed)
    best = (np.inf, None, None)
    for epoch in range(epochs):
        order = rng.permutation(n_train)
        epoch_losses = []
        for start in range(0, n_train, batch):
            idx = order[start:start + batch]
            loss, gw, gb = loss_and_grads(model, s_tr[idx], u_tr[idx])
            if not np.isfinite(loss):
                report.train_loss.append(loss)
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}", report)
            epoch_losses.append(loss)
            step += 1
            bc1 = 1.0 - beta1**step
            bc2 = 1.0 - beta2**step
            for params, grads, ms, vs in ((model.weights, gw, m_w, v_w),
                                          (model.biases, gb, m_b, v_b)):
                for i, g in enumerate(grads):
                    ms[i] = beta1 * ms[i] + (1.0 - beta1) * g
                    vs[i] = beta2 * vs[i] + (1.0 - beta2) * g * g
                    params[i] -= lr * (ms[i] / bc1) / (np.sqrt(vs[i] / bc2) + adam_eps)
        ev_loss = _eval_loss(model, s_ev, u_ev)
        report.train_loss.append(float(np.mean(epoch_losses)))
        report.eval_loss.append(ev_loss)
        if np.isfinite(ev_loss) and ev_loss < best[0]:
            best = (ev_loss, [w.copy() for w in model.weights],
                    [b.copy() for b in model.biases])
            report.best_epoch = epoch + 1
        log.debug("epoch %d: train %.3e eval %.3e", epoch + 1,
                  report.train_loss[-1], ev_loss)

    if best[1] is not None:
        model.weights = best[1]
        model.biases = best[2]
    return model, report


def save_model(model: MlpModel, path, meta: dict | None = None):
    """Write the model as versioned JSON; parameters round trip bit-exactly."""
    doc = {
        "version": MODEL_VERSION,
        "layer_dims": list(model.layer_dims),
        "leaky_slope": model.leaky_slope,
        "norm_mean": model.norm_mean.tolist(),
        "norm_std": model.norm_std.tolist(),
        "layers": [{"w": w.tolist(), "b": b.tolist()}
                   for w, b in zip(model.weights, model.biases)],
    }
    if meta:
        doc["meta"] = meta
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> MlpModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: malformed model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"{path}: expected version {MODEL_VERSION}, got {doc.get('version')!r}")
    try:
        model = MlpModel(
            layer_dims=list(doc["layer_dims"]),
            weights=[np.array(layer["w"], dtype=float) for layer in doc["layers"]],
            biases=[np.array(layer["b"], dtype=float) for layer in doc["layers"]],
            leaky_slope=float(doc["leaky_slope"]),
            norm_mean=np.array(doc["norm_mean"], dtype=float),
            norm_std=np.array(doc["norm_std"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: bad model structure ({exc})") from exc
    return model


@dataclass
class RandomizationBounds:
    """Envelope for rollout initial conditions during sample collection.

    Position errors are relative to the reference orbit around the target;
    the target itself is displaced so the dataset covers the absolute
    positions seen when tracking a drifting target.
    """

    pos_err: float = 5.0          # per-axis UAV offset from the target (m)
    vel: float = 2.0              # per-axis UAV velocity (m/s)
    roll_pitch: float = np.pi / 8  # half of the default angle limit
    yaw: float = np.pi / 6
    rates: float = 0.5            # per-axis Euler rates (rad/s)
    target_speed: float = 0.5     # per-axis target velocity (m/s)
    target_pos: float = 15.0      # per-axis horizontal target displacement (m)
    target_alt: float = 2.0       # target altitude displacement (m)
    min_range: float = 0.5        # resample below this horizontal range (m)


def _random_initial(rng, bounds: RandomizationBounds, z_d: float):
    tgt_pos = np.array([rng.uniform(-bounds.target_pos, bounds.target_pos),
                        rng.uniform(-bounds.target_pos, bounds.target_pos),
                        rng.uniform(-bounds.target_alt, bounds.target_alt)])
    tgt_vel = rng.uniform(-bounds.target_speed, bounds.target_speed, size=3)
    while True:
        offset = rng.uniform(-bounds.pos_err, bounds.pos_err, size=3)
        if np.hypot(offset[0], offset[1]) >= bounds.min_range:
            break
    xv = np.empty(12)
    xv[0:3] = tgt_pos + offset + np.array([0.0, 0.0, z_d])
    xv[3] = rng.uniform(-bounds.roll_pitch, bounds.roll_pitch)
    xv[4] = rng.uniform(-bounds.roll_pitch, bounds.roll_pitch)
    xv[5] = rng.uniform(-bounds.yaw, bounds.yaw)
    xv[6:9] = rng.uniform(-bounds.vel, bounds.vel, size=3)
    xv[9:12] = rng.uniform(-bounds.rates, bounds.rates, size=3)
    return xv, tgt_pos, tgt_vel


def _make_controller(name, cfg, params):
    if name == "lmpc":
        return LinearizedMpc(cfg, params)
    if name == "nmpc":
        return NonlinearMpc(cfg, params)
    raise ValueError(f"unknown teacher controller {name!r}")


def _rollout_samples(seed, pattern, params, cfg, controller_name, steps, bounds):
    rng = np.random.default_rng(seed)
    xv, tgt_pos, tgt_vel = _random_initial(rng, bounds, pattern.z_d)
    controller = _make_controller(controller_name, cfg, params)
    s_rows = np.empty((steps, SAMPLE_DIM))
    u_rows = np.empty((steps, 4))
    try:
        for k in range(steps):
            tgt = TargetState(tgt_pos, tgt_vel)
            ref = plan_trajectory(xv[:3], tgt, pattern, pattern.r_d, cfg.n_p, params.tau)
            u, _ = controller.control(xv, ref)
            s_rows[k, 0:12] = xv
            s_rows[k, 12:15] = ref.states[0, 0:3]
            s_rows[k, 15:18] = ref.states[0, 6:9]
            u_rows[k] = u
            xv = step_euler(xv, u, params)
            if not (abs(xv[3]) < np.pi / 2 and abs(xv[4]) < np.pi / 2):
                raise FaultError("attitude left the valid envelope")
            tgt_pos = tgt_pos + params.tau * tgt_vel
    except FaultError as exc:
        log.warning("rollout discarded: %s", exc)
        return None
    return s_rows, u_rows


def collect_samples(pattern: TrackingPattern, params: QuadParams, cfg: MpcConfig,
                    controller: str = "lmpc", n_rollouts: int = 100,
                    steps_per_rollout: int = 50, seed: int = 0,
                    bounds: RandomizationBounds | None = None,
                    n_jobs: int = 1) -> Dataset:
    """Run randomized closed-loop rollouts and record (s, u*) pairs.

    Rollouts use independent derived seeds and are merged in rollout order,
    so results are identical for any n_jobs.  Faulting rollouts are dropped.
    """
    bounds = bounds or RandomizationBounds()
    seeds = [s.generate_state(1)[0] for s in np.random.SeedSequence(seed).spawn(n_rollouts)]
    args = (pattern, params, cfg, controller, steps_per_rollout, bounds)
    if n_jobs == 1:
        results = [_rollout_samples(s, *args) for s in seeds]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_rollout_samples)(s, *args) for s in seeds)
    kept = [r for r in results if r is not None]
    if not kept:
        raise FaultError("every rollout faulted; no samples collected")
    if len(kept) < n_rollouts:
        log.warning("discarded %d of %d rollouts", n_rollouts - len(kept), n_rollouts)
    return Dataset(np.vstack([r[0] for r in kept]), np.vstack([r[1] for r in kept]))


def fidelity(model: MlpModel, dataset: Dataset, u_max: float, frac_of_umax: float = 0.05):
    """Held-out surrogate fidelity: share of points with ||u_nn - u*||_inf
    within the given fraction of the input bound, plus error statistics."""
    pred = mlp_forward(model, dataset.s)
    err = np.max(np.abs(pred - dataset.u), axis=1)
    threshold = frac_of_umax * u_max
    return {
        "n": int(err.size),
        "threshold": threshold,
        "frac_within": float(np.mean(err <= threshold)),
        "mean_inf_err": float(err.mean()),
        "p95_inf_err": float(np.quantile(err, 0.95)),
        "max_inf_err": float(err.max()),
    }
