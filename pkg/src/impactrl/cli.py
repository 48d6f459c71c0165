"""Command-line front end: train, ablate, sweep, eval, replay-curves.

Every run directory gets the serialized resolved config, one
``seed_<n>/metrics.csv`` + ``checkpoint.json`` per seed, and a
``manifest.json`` tying them together for downstream plotting.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import nnet
from .config import ConfigError, ExperimentConfig, config_with, parse_config, serialize_config
from .objective import TrainingDiverged
from .runtime import evaluate_policy, run_experiment


def _collect_overrides(pairs: list[str] | None) -> dict:
    out: dict = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        out[key.strip()] = val.strip()
    return out


def _load_config(args) -> ExperimentConfig:
    overrides = _collect_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = str(args.seed)
    if getattr(args, "deterministic", False):
        overrides["deterministic"] = "true"
    if getattr(args, "paper_scale", False):
        overrides["desk_divisor"] = "1"
    cfg = parse_config(getattr(args, "config", None), overrides)
    cap = os.environ.get("IMPACT_THREADS")
    if cap:
        cfg = config_with(cfg, workers=max(1, min(cfg.workers, int(cap))))
    return cfg


def _run_seeds(cfg: ExperimentConfig, out_dir: Path, label: str | None = None) -> list[dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(serialize_config(cfg))
    runs = []
    for seed in cfg.seeds:
        seed_dir = out_dir / f"seed_{seed}"
        result = run_experiment(cfg, seed, out_dir=seed_dir)
        runs.append(
            {
                "seed": seed,
                "metrics": str(result.metrics_path.relative_to(out_dir)),
                "checkpoint": str(result.checkpoint_path.relative_to(out_dir)),
                "env_steps": result.env_steps,
                "learner_steps": result.learner_steps,
            }
        )
    manifest = {
        "kind": "train",
        "env": cfg.env,
        "mode": cfg.mode,
        "label": label or cfg.mode,
        "runs": runs,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return runs


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    try:
        runs = _run_seeds(cfg, out_dir)
    except KeyboardInterrupt:
        print("interrupted; partial artifacts kept", file=sys.stderr)
        return 130
    print(f"trained {len(runs)} seed(s) -> {out_dir}")
    return 0


STUDIES = ("ratios", "target-frequency", "buffer-K", "ladder")


def expand_study(cfg: ExperimentConfig, study: str) -> list[tuple[str, ExperimentConfig]]:
    """One (label, config) per study variant."""
    if study == "ratios":
        return [
            (name, config_with(cfg, mode="impact", ratio_variant=variant))
            for name, variant in (("R1", "r1"), ("R2", "r2"), ("R3", "r3"))
        ]
    if study == "target-frequency":
        n = cfg.buffer_slots * cfg.replay_count
        variants = []
        for label, mult in (
            ("n_over_16", 1 / 16),
            ("n_over_4", 1 / 4),
            ("n", 1.0),
            ("4n", 4.0),
            ("16n", 16.0),
        ):
            t_target = max(1, round(n * mult))
            variants.append((f"ttarget_{label}", config_with(cfg, t_target=t_target)))
        return variants
    if study == "buffer-K":
        return [(f"K{k}", config_with(cfg, replay_count=k, t_target=None)) for k in (1, 2, 4, 16, 32)]
    if study == "ladder":
        return [
            (mode, config_with(cfg, mode=mode, ratio_variant=None, eps_clip=None, t_target=None))
            for mode in ("impala_is", "appo", "impact")
        ]
    raise ConfigError(f"unknown study {study!r}; known: {', '.join(STUDIES)}")


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = []
    for name, variant_cfg in expand_study(cfg, args.study):
        runs = _run_seeds(variant_cfg, out_dir / name, label=name)
        variants.append({"name": name, "dir": name, "runs": runs})
    manifest = {"kind": "ablation", "study": args.study, "env": cfg.env, "variants": variants}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"ablation study {args.study}: {len(variants)} variants -> {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    axes: list[tuple[str, list[str]]] = []
    for item in args.grid:
        if "=" not in item:
            raise ConfigError(f"--grid expects key=v1,v2,..., got {item!r}")
        key, _, vals = item.partition("=")
        axes.append((key.strip(), [v.strip() for v in vals.split(",") if v.strip()]))
    variants = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        overrides = {key: val for (key, _), val in zip(axes, combo)}
        name = "_".join(f"{k}-{v}" for k, v in overrides.items())
        combo_cfg = parse_config(None, {**_asdict_str(cfg), **overrides})
        runs = _run_seeds(combo_cfg, out_dir / name, label=name)
        variants.append({"name": name, "dir": name, "overrides": overrides, "runs": runs})
    manifest = {"kind": "sweep", "env": cfg.env, "variants": variants}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"sweep: {len(variants)} runs -> {out_dir}")
    return 0


def _asdict_str(cfg: ExperimentConfig) -> dict:
    pairs = [line.partition(" = ") for line in serialize_config(cfg).strip().splitlines()]
    return {k: v for k, _, v in pairs}


def cmd_eval(args) -> int:
    if args.episodes < 1:
        print("error: --episodes must be >= 1", file=sys.stderr)
        return 2
    params, extra = nnet.load_checkpoint(args.checkpoint)
    env_id = args.env or extra.get("env")
    if not env_id:
        print("error: checkpoint carries no env id; pass --env", file=sys.stderr)
        return 2
    cfg = parse_config(None, {"env": env_id})
    obs_stats = None
    if "obs_mean" in extra:
        obs_stats = (np.asarray(extra["obs_mean"]), np.asarray(extra["obs_std"]))
    returns = evaluate_policy(params, cfg, args.seed, args.episodes, obs_stats=obs_stats)
    print(f"episodes={args.episodes} mean_return={returns.mean():.4f} std={returns.std():.4f}")
    return 0


def cmd_replay_curves(args) -> int:
    try:
        from plotkit.render import render_run_dir
    except ImportError:
        print(
            "error: plotkit is not installed; install the plotkit package to render curves",
            file=sys.stderr,
        )
        return 3
    out = render_run_dir(Path(args.dir), Path(args.out), x_axis=args.x_axis)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impactrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        p.add_argument("--seed", type=int, default=None, help="run a single seed")
        p.add_argument("--deterministic", action="store_true", help="single-threaded scripted scheduler")
        p.add_argument("--paper-scale", action="store_true", help="disable desk-scale batch division")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="train over the configured seeds")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_ablate = sub.add_parser("ablate", help="run a predefined ablation study")
    common(p_ablate)
    p_ablate.add_argument("--study", required=True, choices=STUDIES)
    p_ablate.set_defaults(func=cmd_ablate)

    p_sweep = sub.add_parser("sweep", help="grid sweep over config keys")
    common(p_sweep)
    p_sweep.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2,...")
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("eval", help="deterministic-policy rollouts from a checkpoint")
    p_eval.add_argument("--checkpoint", required=True, type=Path)
    p_eval.add_argument("--env", default=None)
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    p_replay = sub.add_parser("replay-curves", help="render curves from a finished run directory")
    p_replay.add_argument("--dir", required=True)
    p_replay.add_argument("--out", required=True)
    p_replay.add_argument("--x-axis", default="env_steps", choices=("env_steps", "wall_clock_s"))
    p_replay.set_defaults(func=cmd_replay_curves)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
