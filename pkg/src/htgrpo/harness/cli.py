"""Command-line front end: train, compare, verify-props, rollout, export.

Exit codes: 0 success, 1 configuration or usage error, 2 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import env
from ..errors import ConfigError, TrainingError
from ..policy import init_policy, load_checkpoint
from ..rollout import format_trajectory, rollout
from ..trainer import TrainConfig, train
from . import metrics, presets, props
from .config import apply_overrides, dump_config, load_config

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for verification failure here
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _base_config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    over = {}
    for key in ("seed", "cycles"):
        if getattr(args, key, None) is not None:
            over[key] = getattr(args, key)
    return apply_overrides(cfg, over) if over else cfg


def cmd_train(args) -> int:
    cfg = _base_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg))
    state, rows = train(cfg, checkpoint_dir=out)
    metrics.write_csv(rows, out / "metrics.csv")
    metrics.write_jsonl(rows, out / "metrics.jsonl")
    print(f"trained {state.cycle} cycles, wrote {len(rows)} rows to {out / 'metrics.csv'}")
    return EXIT_OK


def _final_reward(rows, window: int) -> tuple[float, float]:
    series = metrics.per_cycle(rows)
    rewards = np.array([s[1] for s in series])
    if rewards.size == 0:
        return float("nan"), float("nan")
    w = min(window, rewards.size)
    return float(rewards[:w].mean()), float(rewards[-w:].mean())


def cmd_compare(args) -> int:
    base = _base_config(args)
    seeds = args.seeds or [base.seed]
    variants = presets.variants(args.preset)
    table = []
    for label, over in variants:
        firsts, lasts = [], []
        for seed in seeds:
            cfg = apply_overrides(base, {**over, "seed": seed})
            _, rows = train(cfg)
            if args.out:
                out = Path(args.out) / label.replace(" ", "_").replace(":", "-") / f"seed{seed}"
                out.mkdir(parents=True, exist_ok=True)
                metrics.write_csv(rows, out / "metrics.csv")
            first, last = _final_reward(rows, args.window)
            firsts.append(first)
            lasts.append(last)
        table.append((label, float(np.mean(firsts)), float(np.mean(lasts))))

    width = max(len(t[0]) for t in table)
    print(f"{'variant':<{width}}  first{args.window:<4} last{args.window:<4} delta")
    for label, first, last in table:
        print(f"{label:<{width}}  {first:.4f}   {last:.4f}  {last - first:+.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _base_config(args)
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint)
    else:
        state, _ = train(cfg)
        params = state.params
    report = props.verify_all(
        params,
        alpha=cfg.alpha,
        entropy_trials=args.entropy_trials,
        contamination_trials=args.trials,
        sampler=cfg.sampler,
        seed=args.mc_seed,
    )
    sys.stdout.write(report.text())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_rollout(args) -> int:
    cfg = _base_config(args)
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint)
        cfg = apply_overrides(cfg, {
            k: getattr(params.config, k) for k in ("vocab_size", "seq_len", "num_prompts", "embed_dim", "hidden_dim")
        })
    else:
        params = init_policy(cfg.policy, cfg.seed)
    if not 0 <= args.prompt < cfg.policy.num_prompts:
        raise ConfigError(f"prompt must lie in [0, {cfg.policy.num_prompts}), got {args.prompt}")
    task = cfg.task()
    rng = np.random.default_rng(args.sample_seed)
    for _ in range(args.count):
        r = rollout(params, args.prompt, cfg.sampler, rng)
        sys.stdout.write(format_trajectory(r, args.sample_seed))
        if args.reward:
            print(f"reward={env.reward(r.final, args.prompt, task)!r}")
    return EXIT_OK


def cmd_export(args) -> int:
    src = Path(args.metrics)
    if not src.exists():
        raise ConfigError(f"metrics not found: {src}")
    rows = metrics.read_metrics(src)
    out = Path(args.out)
    metrics.write_csv(rows, out)
    svg = Path(args.svg) if args.svg else out.with_suffix(".svg")
    svg.write_text(metrics.svg_plot(rows))
    print(f"wrote {out} and {svg}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="htgrpo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--cycles", type=int)

    sp = sub.add_parser("train", help="train one run")
    common(sp)
    sp.add_argument("--out", default="runs/train")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("compare", help="train paradigms or a preset's variants side by side")
    common(sp)
    sp.add_argument("--preset", choices=sorted(presets.PRESETS))
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.add_argument("--window", type=int, default=10, help="cycles averaged at each end")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("verify-props", help="Monte-Carlo checks of the entropy and contamination properties")
    common(sp)
    sp.add_argument("--checkpoint", help="policy checkpoint; default trains one from the config")
    sp.add_argument("--trials", type=int, default=100_000, help="contamination trials")
    sp.add_argument("--entropy-trials", type=int, default=5000)
    sp.add_argument("--mc-seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("rollout", help="dump sampled trajectories")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--prompt", type=int, default=0)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--sample-seed", type=int, default=0)
    sp.add_argument("--reward", action="store_true", help="append the task reward after each dump")
    sp.set_defaults(func=cmd_rollout)

    sp = sub.add_parser("export", help="convert metrics to CSV plus an SVG plot")
    sp.add_argument("metrics", help="metrics.csv, metrics.jsonl or a run directory")
    sp.add_argument("--out", default="metrics.csv")
    sp.add_argument("--svg")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
