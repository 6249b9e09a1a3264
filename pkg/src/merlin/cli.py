"""Command-line entry point: ``merlin <subcommand> [flags]``.

Values come from ``--config`` (see :mod:`merlin.config`) and are then
overridden by any flag given explicitly. Exit status is 0 on success, 1 for
invalid input (bad config, missing files, bad flags) and 2 for failures while
running.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, dataset as ds_mod
from ._kernels import BACKEND
from .config import ConfigError, RunConfig
from .env import make_spec
from .rng import derive_seed

log = logging.getLogger("merlin")


class CliError(Exception):
    """Invalid user input; maps to exit status 1."""


def _goal(text: str | None):
    if text is None:
        return None
    vals = tuple(float(v) for v in text.split(","))
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("goal takes 'x,y'")
    return vals


def _goals(text: str):
    return [_goal(part) for part in text.split(";") if part.strip()]


def _ints(text: str):
    return [int(v) for v in text.split(",") if v.strip()]


def _grid(text: str):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("grid takes 'NxM'")
    return int(parts[0]), int(parts[1])


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, cfg: RunConfig, outputs, extra=None) -> None:
    """Record what is needed to rerun a command byte-for-byte."""
    man = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.to_text(),
        "seed": cfg.run.seed,
        "derived_seeds": {p: derive_seed(cfg.run.seed, p)
                          for p in ("data", "policy/init", "policy/batches", "stitch",
                                    "reverse_model", "eval")},
        "versions": {"merlin": __version__, "numpy": np.__version__,
                     "python": platform.python_version(), "kernels": BACKEND},
        "outputs": {str(p): _sha256(p) for p in outputs if Path(p).exists()},
    }
    if extra:
        man.update(extra)
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _config(args) -> RunConfig:
    cfg = cfgmod.load(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = cfg.override("run", seed=getattr(args, "seed", None), mode=getattr(args, "mode", None),
                       out_dir=getattr(args, "out_dir", None))
    cfg = cfg.override("env", name=getattr(args, "env", None))
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path) -> ds_mod.Dataset:
    if not path:
        raise CliError("no dataset given; pass --data or set [data] path")
    if not Path(path).exists():
        raise CliError(f"dataset {path} does not exist")
    return ds_mod.load(path)


def _load_policy(path):
    from .policy import GaussianPolicy
    if not path or not Path(path).exists():
        raise CliError(f"checkpoint {path!r} does not exist")
    return GaussianPolicy.from_checkpoint(path)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _config(args).override(
        "data", n_trajectories=args.n, generator=args.generator, noise_sigma=args.noise_sigma,
        goal=args.goal, path=args.out).validate()
    spec = make_spec(cfg.env.name)
    d = cfg.data
    seed = derive_seed(cfg.run.seed, "data")
    if d.generator == "random":
        data = ds_mod.generate_random(spec, d.n_trajectories, seed)
    elif d.generator == "expert":
        data = ds_mod.generate_expert(spec, d.n_trajectories, d.noise_sigma, seed)
    elif d.generator == "reverse_play":
        data = ds_mod.generate_reverse_play(spec, d.n_trajectories, d.goal, seed)
    else:
        raise CliError(f"generator {d.generator!r} cannot be generated directly")
    path = Path(d.path or _out_dir(cfg) / "data.mrln")
    path.parent.mkdir(parents=True, exist_ok=True)
    ds_mod.save(data, path)
    write_manifest(path.with_suffix(".manifest.json"), "gen-data", cfg, [path])
    print(f"{'env':<14}{spec.name}\n{'generator':<14}{d.generator}\n"
          f"{'trajectories':<14}{len(data)}\n{'transitions':<14}{data.n_transitions}\n"
          f"{'file':<14}{path}")
    return 0


def cmd_stitch(args) -> int:
    from .neighbors import BallTree
    from .stitcher import StitchConfig, stitch, stitch_stats, tune_delta
    cfg = _config(args).override("stitch", delta=args.delta, n_new=args.m) \
                       .override("data", path=args.data).validate()
    data = _load_dataset(cfg.data.path)
    tree = BallTree.from_dataset(data)
    delta = cfg.stitch.delta
    if args.tune is not None:
        delta = tune_delta(data, tree, args.tune, seed=derive_seed(cfg.run.seed, "tune"))
        cfg = cfg.override("stitch", delta=delta)
    out = stitch(data, tree, StitchConfig(delta, cfg.stitch.n_new, derive_seed(cfg.run.seed, "stitch")))
    stats = stitch_stats(data, out)
    path = Path(args.out or _out_dir(cfg) / "stitched.mrln")
    path.parent.mkdir(parents=True, exist_ok=True)
    ds_mod.save(out, path)
    write_manifest(path.with_suffix(".manifest.json"), "stitch", cfg, [path], {"stats": stats})
    print(f"{'delta':<24}{delta:g}\n{'trajectories':<24}{len(out)}\n"
          f"{'switches/trajectory':<24}{stats['switches_per_trajectory']:.3f}\n"
          f"{'new state-goal pairs':<24}{stats['new_state_goal_pairs']}\n{'file':<24}{path}")
    return 0


def cmd_train(args) -> int:
    from .policy import train
    cfg = _config(args).override("data", path=args.data) \
                       .override("train", updates=args.updates).validate()
    data = _load_dataset(cfg.data.path)
    tc = cfg.train_config()
    out = _out_dir(cfg)
    ckpt_dir = out / "checkpoints" if tc.checkpoint_every else None
    if ckpt_dir:
        ckpt_dir.mkdir(exist_ok=True)
    result = train(data, tc, cfg.run.seed, checkpoint_dir=ckpt_dir)
    ckpt = out / "policy.ckpt"
    result.policy.save(ckpt, result.adam, {"mode": tc.mode, "updates": tc.updates,
                                           "seed": cfg.run.seed, "config_sha256": cfg.digest()})
    result.write_log(out / "train_log.csv")
    (out / "config.ini").write_text(cfg.to_text())
    extra = {k: v for k, v in result.extras.items() if k == "stitch"}
    write_manifest(out / "manifest.json", "train", cfg, [ckpt, out / "train_log.csv"], extra)
    final = result.log[-1][1] if result.log else float("nan")
    print(f"{'mode':<14}{tc.mode}\n{'updates':<14}{tc.updates}\n{'final loss':<14}{final:.4f}\n"
          f"{'checkpoint':<14}{ckpt}")
    return 0


def _eval_cfg(args) -> RunConfig:
    return _config(args).override(
        "eval", gamma=args.gamma, horizon=getattr(args, "h", None), episodes=args.episodes,
        goal_mode=getattr(args, "goal_mode", None), goal=getattr(args, "goal", None)).validate()


def _report_out(args, cfg, name: str) -> Path:
    path = Path(args.out or _out_dir(cfg) / name)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_eval(args) -> int:
    from .evaluation import evaluate, format_table, write_reports
    cfg = _eval_cfg(args)
    pol = _load_policy(args.checkpoint)
    e = cfg.eval
    rep = evaluate(pol, make_spec(cfg.env.name), e.episodes, e.gamma, e.horizon, e.goal_mode,
                   derive_seed(cfg.run.seed, "eval"), e.goal)
    path = _report_out(args, cfg, "eval.csv")
    write_reports([rep], path)
    write_manifest(path.with_suffix(".manifest.json"), "eval", cfg, [path],
                   {"checkpoint_sha256": _sha256(args.checkpoint)})
    print(format_table([rep]))
    return 0


def cmd_sweep_horizon(args) -> int:
    from .evaluation import format_table, horizon_sweep, write_reports
    cfg = _eval_cfg(args)
    pol = _load_policy(args.checkpoint)
    e = cfg.eval
    reps = horizon_sweep(pol, make_spec(cfg.env.name), args.horizons, e.episodes, e.gamma,
                         e.goal_mode, derive_seed(cfg.run.seed, "eval"), e.goal)
    path = _report_out(args, cfg, "horizon_sweep.csv")
    write_reports(reps, path)
    write_manifest(path.with_suffix(".manifest.json"), "sweep-horizon", cfg, [path],
                   {"checkpoint_sha256": _sha256(args.checkpoint)})
    print(format_table(reps, key="eval_horizon"))
    return 0


def cmd_sweep_ood(args) -> int:
    from .evaluation import format_table, ood_goal_sweep, write_reports
    cfg = _eval_cfg(args)
    pol = _load_policy(args.checkpoint)
    e = cfg.eval
    reps = ood_goal_sweep(pol, make_spec(cfg.env.name), args.goals, e.episodes,
                          derive_seed(cfg.run.seed, "eval"), e.gamma, e.horizon)
    path = _report_out(args, cfg, "ood_sweep.csv")
    write_reports(reps, path)
    write_manifest(path.with_suffix(".manifest.json"), "sweep-ood", cfg, [path],
                   {"checkpoint_sha256": _sha256(args.checkpoint)})
    print(format_table(reps))
    return 0


def cmd_export_field(args) -> int:
    from .evaluation import export_vector_field, goal_cosine
    cfg = _config(args).validate()
    pol = _load_policy(args.checkpoint)
    path = _report_out(args, cfg, "field.csv")
    rows = export_vector_field(pol, make_spec(cfg.env.name), args.goal, args.h, args.grid, path)
    print(f"{'cells':<16}{rows.shape[0]}\n{'goal cosine':<16}{goal_cosine(rows, args.goal):.4f}\n"
          f"{'mean sigma':<16}{rows[:, 4:].mean():.4f}\n{'file':<16}{path}")
    return 0


def cmd_grad_check(args) -> int:
    from .diagnostics import run_grad_checks
    errs = run_grad_checks(args.instances, args.seed or 0)
    worst = max(errs.values())
    for name, err in errs.items():
        print(f"{name:<16}{err:.3e}  {'ok' if err < args.tol else 'FAIL'}")
    return 0 if worst < args.tol else 2


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="merlin", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, env=True):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", dest="out_dir")
        if env:
            sp.add_argument("--env", help="PointReach or PointRooms")

    sp = sub.add_parser("gen-data", help="generate an offline dataset")
    common(sp)
    sp.add_argument("--n", type=int, help="number of trajectories")
    sp.add_argument("--generator", choices=["random", "expert", "reverse_play"])
    sp.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    sp.add_argument("--goal", type=_goal, help="x,y (reverse_play)")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("stitch", help="augment a dataset by nearest-neighbour stitching")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--delta", type=float)
    sp.add_argument("--m", type=int, help="number of stitched trajectories")
    sp.add_argument("--tune", type=float, metavar="SWITCHES",
                    help="pick delta for this mean switch count")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_stitch)

    sp = sub.add_parser("train", help="train a goal-conditioned policy")
    common(sp)
    sp.add_argument("--mode", choices=["merlin", "merlin_np", "merlin_p", "gcsl"])
    sp.add_argument("--data")
    sp.add_argument("--updates", type=int)
    sp.set_defaults(fn=cmd_train)

    def eval_flags(sp, horizon=True):
        common(sp)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--gamma", type=float)
        if horizon:
            sp.add_argument("--h", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    eval_flags(sp)
    sp.add_argument("--goal-mode", dest="goal_mode", choices=["uniform", "fixed"])
    sp.add_argument("--goal", type=_goal)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("sweep-horizon", help="evaluate over several horizon inputs")
    eval_flags(sp, horizon=False)
    sp.add_argument("--horizons", type=_ints, default=[1, 5, 10, 20, 50])
    sp.add_argument("--goal-mode", dest="goal_mode", choices=["uniform", "fixed"])
    sp.add_argument("--goal", type=_goal)
    sp.set_defaults(fn=cmd_sweep_horizon)

    sp = sub.add_parser("sweep-ood", help="evaluate at a list of fixed goals")
    eval_flags(sp)
    sp.add_argument("--goals", type=_goals, required=True, help="'x,y;x,y;...'")
    sp.set_defaults(fn=cmd_sweep_ood)

    sp = sub.add_parser("export-field", help="write the policy's action field as CSV")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--goal", type=_goal, required=True)
    sp.add_argument("--h", type=int, default=1)
    sp.add_argument("--grid", type=_grid, default=(20, 20))
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_export_field)

    sp = sub.add_parser("grad-check", help="finite-difference checks of every loss")
    sp.add_argument("--instances", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(fn=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("MERLIN_THREADS")
    try:
        if threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(threads)):
                return args.fn(args)
        return args.fn(args)
    except (CliError, ConfigError, ds_mod.DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
