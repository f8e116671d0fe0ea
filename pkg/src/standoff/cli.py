"""Command-line entry point: simulate | collect | train | eval | bench.

Every command is reproducible from its config and seed alone; output files
carry the config hash and seed in a metadata block.  Flat flags override
config-file fields.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import sim
from .errors import ConfigError, FaultError, ModelFormatError
from .guidance import ImState, TrackingPattern
from .mpc import MpcConfig
from .policy import (Dataset, RandomizationBounds, collect_samples, fidelity,
                     load_model, save_model, train)
from .quad import QuadParams


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _build(field, cls, cfg, path):
    """Construct a config dataclass from a dict section with field checks."""
    section = cfg.get(field, {})
    if not isinstance(section, dict):
        raise ConfigError(f"{path}.{field}: expected an object")
    valid = set(cls.__dataclass_fields__)
    unknown = set(section) - valid
    if unknown:
        raise ConfigError(f"{path}.{field}: unknown keys {sorted(unknown)}; "
                          f"valid keys are {sorted(valid)}")
    try:
        return cls(**section)
    except ConfigError as exc:
        raise ConfigError(f"{path}.{field}: {exc}") from exc


def _target_velocity(spec):
    if spec is None or spec == "stationary":
        return sim.stationary_target()
    if spec == "default-moving":
        return sim.default_moving_target()
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "constant":
            return sim.constant_velocity(spec["velocity"])
        if kind == "sinusoid":
            return sim.sinusoid_velocity(spec["amp"], spec["omega"], spec["phase"])
    raise ConfigError(f"target_motion: unsupported spec {spec!r}")


def scenario_from_config(cfg: dict, path="config") -> sim.Scenario:
    pattern = _build("pattern", TrackingPattern, cfg, path)
    quad = _build("quad", QuadParams, cfg, path)
    mpc_cfg = _build("mpc", MpcConfig, cfg, path)
    im = None
    if "im" in cfg and cfg["im"] is not None:
        im_cfg = dict(cfg["im"])
        im = ImState.for_pattern(pattern, c1=im_cfg.get("c1", 0.2),
                                 c2=im_cfg.get("c2"))
    known = {"pattern", "quad", "mpc", "im", "controller", "uav_init",
             "target_position", "target_motion", "noise_std", "duration",
             "metrics_window", "seed", "name", "model_path"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    uav = cfg.get("uav_init", {})
    model = None
    if cfg.get("model_path"):
        model = load_model(cfg["model_path"])
    return sim.Scenario(
        pattern=pattern, quad=quad, mpc=mpc_cfg,
        controller=cfg.get("controller", "lmpc"),
        uav_position=np.asarray(uav.get("position", [5.0, 5.0, 0.0]), dtype=float),
        uav_yaw=float(uav.get("yaw", 0.0)),
        target_position=np.asarray(cfg.get("target_position", [0.0, 0.0, 0.0]), dtype=float),
        target_velocity=_target_velocity(cfg.get("target_motion")),
        model=model, im=im, noise_std=float(cfg.get("noise_std", 0.0)),
        duration=float(cfg.get("duration", 60.0)),
        metrics_window=float(cfg.get("metrics_window", 20.0)),
        seed=int(cfg.get("seed", 0)), name=str(cfg.get("name", "scenario")))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    if args.preset:
        scenario = sim.preset_scenario(args.preset,
                                       controller=args.controller or "lmpc")
        cfg = {"preset": args.preset}
        if args.model:
            scenario.model = load_model(args.model)
    else:
        if args.controller:
            cfg["controller"] = args.controller
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.model:
            cfg["model_path"] = args.model
        scenario = scenario_from_config(cfg)
    if args.seed is not None:
        scenario.seed = args.seed
        cfg["seed"] = args.seed
    if args.controller:
        scenario.controller = args.controller
        cfg["controller"] = args.controller
        if scenario.controller == "nn-im" and scenario.im is None:
            scenario.im = ImState.for_pattern(scenario.pattern)

    out = _out_dir(args)
    meta = {"config_hash": _config_hash(cfg), "seed": scenario.seed}
    rec = sim.run_closed_loop(scenario)
    rec.to_csv(out / "run.csv", meta)
    payload = {**meta, **sim.summary(rec, scenario)}
    _write_json(out / "summary.json", payload)
    print(f"wrote {out / 'run.csv'} and {out / 'summary.json'}")
    if rec.aborted:
        print(f"run aborted: {rec.abort_reason}", file=sys.stderr)
        return 1
    return 0


def cmd_collect(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    scenario = scenario_from_config(cfg) if cfg else sim.Scenario()
    seed = args.seed if args.seed is not None else scenario.seed
    steps = args.steps_per_rollout
    n_rollouts = max(1, int(np.ceil(args.samples / steps)))
    ds = collect_samples(scenario.pattern, scenario.quad, scenario.mpc,
                         controller=args.controller or "lmpc",
                         n_rollouts=n_rollouts, steps_per_rollout=steps,
                         seed=seed, n_jobs=args.jobs)
    out = _out_dir(args)
    meta = {"config_hash": _config_hash({**cfg, "samples": args.samples}), "seed": seed}
    ds.save_csv(out / "dataset.csv", meta)
    print(f"wrote {len(ds)} samples to {out / 'dataset.csv'}")
    return 0


def cmd_train(args) -> int:
    ds = Dataset.load_csv(args.dataset)
    hidden = tuple(int(h) for h in args.hidden.split(",")) if args.hidden else (64, 64)
    model, report = train(ds, epochs=args.epochs, batch=args.batch,
                          seed=args.seed or 0, hidden=hidden)
    out = _out_dir(args)
    meta = {"config_hash": _config_hash({"dataset": str(args.dataset),
                                         "epochs": args.epochs, "batch": args.batch,
                                         "hidden": list(hidden)}),
            "seed": args.seed or 0}
    save_model(model, out / "model.json", meta)
    _write_json(out / "train_report.json", {
        **meta, "epochs": report.epochs, "batch_size": report.batch_size,
        "best_epoch": report.best_epoch, "train_loss": report.train_loss,
        "eval_loss": report.eval_loss})
    print(f"wrote {out / 'model.json'}; final eval loss {report.eval_loss[-1]:.4e}")
    return 0


def cmd_eval(args) -> int:
    ds = Dataset.load_csv(args.dataset)
    model = load_model(args.model)
    u_max = args.u_max
    stats = fidelity(model, ds, u_max)
    out = _out_dir(args)
    payload = {"config_hash": _config_hash({"dataset": str(args.dataset),
                                            "model": str(args.model)}),
               "seed": args.seed or 0, **stats}
    _write_json(out / "eval.json", payload)
    print(f"{stats['frac_within'] * 100:.1f}% of {stats['n']} points within "
          f"{stats['threshold']:.3f} (inf-norm)")
    return 0


def cmd_bench(args) -> int:
    scenario = sim.preset_scenario("stationary-se")
    controllers = {
        "nmpc": sim.make_controller(sim.Scenario(controller="nmpc")),
        "lmpc": sim.make_controller(sim.Scenario(controller="lmpc")),
    }
    if args.model:
        model = load_model(args.model)
        controllers["nn"] = sim.NetworkPolicy(model, scenario.quad,
                                              scenario.mpc.angle_limit,
                                              scenario.mpc.u_max)
    probes = sim.make_probes(scenario, n_probes=min(20, max(args.n_calls, 1)))
    table = sim.bench_latency(controllers, probes, args.n_calls)
    out = _out_dir(args)
    payload = {"config_hash": _config_hash({"n_calls": args.n_calls}),
               "seed": args.seed or 0, "latency": table}
    _write_json(out / "bench.json", payload)
    for name, row in table.items():
        print(f"{name:>6}: median {row['median'] * 1e3:8.3f} ms   "
              f"p95 {row['p95'] * 1e3:8.3f} ms")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="standoff",
        description="Standoff tracking: guidance, MPC, distilled network, benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON scenario config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p_sim = sub.add_parser("simulate", help="run one closed-loop scenario")
    common(p_sim)
    p_sim.add_argument("--preset", choices=sorted([*sim.PRESETS, "moving"]))
    p_sim.add_argument("--controller", choices=sim.CONTROLLERS)
    p_sim.add_argument("--model", help="model.json for the nn controllers")
    p_sim.set_defaults(func=cmd_simulate)

    p_col = sub.add_parser("collect", help="collect (state, optimal input) samples")
    common(p_col)
    p_col.add_argument("--samples", type=int, default=10000)
    p_col.add_argument("--steps-per-rollout", type=int, default=50)
    p_col.add_argument("--controller", choices=("lmpc", "nmpc"))
    p_col.add_argument("--jobs", type=int, default=1)
    p_col.set_defaults(func=cmd_collect)

    p_tr = sub.add_parser("train", help="fit the network to a dataset")
    common(p_tr)
    p_tr.add_argument("--dataset", required=True)
    p_tr.add_argument("--epochs", type=int, default=20)
    p_tr.add_argument("--batch", type=int, default=200)
    p_tr.add_argument("--hidden", help="comma-separated hidden sizes, e.g. 100,100")
    p_tr.set_defaults(func=cmd_train)

    p_ev = sub.add_parser("eval", help="held-out fidelity of a trained model")
    common(p_ev)
    p_ev.add_argument("--dataset", required=True)
    p_ev.add_argument("--model", required=True)
    p_ev.add_argument("--u-max", type=float, default=12.0)
    p_ev.set_defaults(func=cmd_eval)

    p_be = sub.add_parser("bench", help="latency comparison of the controllers")
    common(p_be)
    p_be.add_argument("--n-calls", type=int, default=50)
    p_be.add_argument("--model", help="include network inference in the table")
    p_be.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FaultError as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
