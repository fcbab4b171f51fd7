"""Command-line entry point.

Subcommands: train, eval, bench, pretrain, export-plots. Every run directory
is self-describing: it receives a resolved config copy, a version/config
stamp, metrics, and checkpoints. Exit codes: 0 success, 1 configuration or
validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, RunConfig, config_dict, config_hash,
                     default_out_root, load_config, make_arch,
                     make_rollout_settings, save_config)

logger = logging.getLogger("diffquad")


def _add_common_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--task", choices=["state", "features"])
    p.add_argument("--trainer", choices=["bptt", "ppo"])
    p.add_argument("--envs", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--iters", type=int, dest="iterations")
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=str, help="comma-separated hidden sizes")
    p.add_argument("--forward", choices=["simple", "full"], dest="forward_model")
    p.add_argument("--backward", choices=["simple", "full"], dest="backward_model")
    p.add_argument("--shards", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--out", type=Path, help="output directory")


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for name in ("task", "trainer", "envs", "horizon", "iterations", "seed",
                 "forward_model", "backward_model", "shards", "workers",
                 "checkpoint_every"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "hidden", None):
        cfg.hidden = tuple(int(h) for h in args.hidden.split(","))
    if getattr(args, "lr", None) is not None:
        cfg.optim.lr = args.lr
        cfg.ppo.lr = args.lr
    if getattr(args, "pretrain", False):
        cfg.run_pretrain = True
    return cfg.normalized()


def _make_run_dir(args, cfg: RunConfig) -> Path:
    if args.out is not None:
        run_dir = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        name = f"{cfg.task}_{cfg.trainer}_s{cfg.seed}_{stamp}"
        root = Path(cfg.out_root) if cfg.out_root else default_out_root()
        run_dir = root / name
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.yaml")
    (run_dir / "runmeta.json").write_text(json.dumps({
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "workers": cfg.workers,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }, indent=2) + "\n")
    return run_dir


def cmd_train(args) -> int:
    cfg = _build_config(args)
    run_dir = _make_run_dir(args, cfg)
    initial = None
    if cfg.run_pretrain:
        from .pretrain import run_pretraining
        logger.info("pretraining representation before policy optimization")
        initial = run_pretraining(cfg, out_dir=run_dir)
    if cfg.trainer == "bptt":
        from .train_bptt import train
        result = train(cfg, out_dir=run_dir, initial_params=initial,
                       progress=True)
    else:
        from .train_ppo import train
        result = train(cfg, out_dir=run_dir, initial_actor_trunk=initial,
                       progress=True)
    best = result.best_reward()
    print(f"run complete: {run_dir}  best mean reward {best:.3f}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate, load_controller
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    cfg_path = args.config or (ckpt.parent / "config.yaml")
    cfg = load_config(cfg_path) if Path(cfg_path).exists() else RunConfig()
    if args.task:
        cfg.task = args.task
    cfg = cfg.normalized()
    if args.noise_sigma is not None:
        cfg.camera.noise_std = args.noise_sigma
    s = make_rollout_settings(cfg)
    build, meta = load_controller(ckpt)
    in_dim = meta.get("arch", meta.get("actor_arch", {})).get("in_dim")
    if in_dim is not None and in_dim != cfg.obs_dim():
        raise ConfigError(
            f"checkpoint expects {in_dim}-dim observations but task "
            f"'{cfg.task}' provides {cfg.obs_dim()}")
    out_dir = args.out or (ckpt.parent / "eval")
    report = evaluate(build(s), s, cfg.init_state, args.episodes, args.seed,
                      out_dir=out_dir, write_trajectories=True)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_bench(args) -> int:
    from .bench import format_table, run_bench, to_csv
    from .policy import init_params
    cfg = _build_config(args)
    s = make_rollout_settings(cfg)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(make_arch(cfg), rng)
    counts = [int(c) for c in args.env_counts.split(",")]
    modes = args.modes.split(",")
    results = run_bench(params, s, counts, modes=modes, reps=args.reps,
                        warmup=args.warmup, seed=cfg.seed,
                        init_cfg=cfg.init_state)
    table = format_table(results)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench_table.txt").write_text(table + "\n")
        (out / "bench.csv").write_text(to_csv(results))
        save_config(cfg, out / "config.yaml")
    return 0


def cmd_pretrain(args) -> int:
    from .policy import save_policy
    from .pretrain import run_pretraining
    cfg = _build_config(args)
    if cfg.task != "features":
        raise ConfigError("pretraining requires --task features")
    run_dir = _make_run_dir(args, cfg)
    params = run_pretraining(cfg, out_dir=run_dir)
    save_policy(run_dir / "pretrained_policy.npz", params,
                extra={"kind": "pretrained-policy", "task": cfg.task})
    print(f"pretraining artifacts in {run_dir}")
    return 0


def cmd_export_plots(args) -> int:
    from .plots import export_plots
    targets = tuple(float(t) for t in args.targets.split(",")) \
        if args.targets else None
    kwargs = {"targets": targets} if targets else {}
    summary = export_plots(args.run_dirs, args.out, **kwargs)
    for d in summary["skipped"]:
        print(f"warning: skipped {d} (no metrics)", file=sys.stderr)
    if not summary["runs"]:
        print("no runs with metrics found", file=sys.stderr)
        return 1
    print(f"exported {', '.join(summary['files'])} for runs: "
          f"{', '.join(summary['runs'])} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffquad",
        description="Differentiable quadrotor simulation and policy training")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy (BPTT or PPO)")
    _add_common_overrides(p)
    p.add_argument("--pretrain", action="store_true",
                   help="run state-representation pretraining first")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint from random throws")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=None,
                   help="Gaussian pixel-noise std for feature observations")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--task", choices=["state", "features"], default=None)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="throughput benchmark")
    _add_common_overrides(p)
    p.add_argument("--env-counts", type=str, default="1,10,100",
                   dest="env_counts")
    p.add_argument("--modes", type=str, default="rollout,bptt-simple,bptt-full")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pretrain", help="state-representation pretraining only")
    _add_common_overrides(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("export-plots", help="comparison tables and plots")
    p.add_argument("run_dirs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--targets", type=str, default=None,
                   help="comma-separated reward targets")
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
