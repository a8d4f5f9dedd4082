"""Command-line entry point: ``lfs <subcommand>``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, TrainConfig, load_config, parse_config_text
from .framepack import write_pack
from .pretrain import pretrain_on_videos, record_packs
from .train import analyze_values, evaluate, load_policy, summarize_values, train_end_to_end


def _config(args) -> TrainConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = PRESETS[args.preset]()
    if args.set:
        cfg = parse_config_text("\n".join(args.set), base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="base settings when no --config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")


def cmd_train(args) -> int:
    out = train_end_to_end(_config(args), args.out)
    print(f"run written to {out}")
    return 0


def cmd_pretrain(args) -> int:
    packs = sorted(Path(args.packs).glob("*.lfsp")) if Path(args.packs).is_dir() else [Path(args.packs)]
    if not packs:
        print(f"no .lfsp packs under {args.packs}", file=sys.stderr)
        return 2
    path = pretrain_on_videos(_config(args), packs, args.out, updates=args.updates)
    print(f"encoder written to {path}")
    return 0


def cmd_eval(args) -> int:
    policy = load_policy(args.checkpoint)
    if policy.nets is None:
        print("checkpoint holds an encoder only; train a policy first", file=sys.stderr)
        return 2
    cfg = policy.config.replace(env=args.env) if args.env else policy.config
    mean, std, returns = evaluate(policy.bank, policy.nets, cfg.env_spec(), args.episodes, seed=args.seed)
    for i, r in enumerate(returns):
        print(f"episode {i} return {r:.3f}")
    print(f"mean {mean:.3f} +- {std:.3f}")
    return 0


def cmd_analyze_values(args) -> int:
    if args.run:
        stats = summarize_values(Path(args.run) / "values.csv")
    else:
        policy = load_policy(args.checkpoint)
        if args.config:
            policy.config = load_config(args.config)
        stats = analyze_values(policy, batches=args.batches, seed=args.seed)
    print(f"{'observations':<14}{'mean value':>12}{'max value':>12}")
    for name in ("synthetic", "real"):
        mean, peak = stats[name]
        print(f"{name:<14}{mean:>12.4f}{peak:>12.4f}")
    return 0


def cmd_pack(args) -> int:
    files = sorted(Path(args.frames).glob("*.npy"))
    if not files:
        print(f"no .npy episode arrays under {args.frames}", file=sys.stderr)
        return 2
    eps = [np.load(f) for f in files]
    lengths = {len(e) for e in eps}
    if len(lengths) != 1:
        print(f"episodes have differing lengths {sorted(lengths)}", file=sys.stderr)
        return 2
    write_pack(args.out, np.concatenate(eps), lengths.pop())
    print(f"packed {len(eps)} episodes into {args.out}")
    return 0


def cmd_record(args) -> int:
    cfg = _config(args).replace(env=args.env)
    path = record_packs(cfg.env_spec(), args.out, args.episodes, args.frames_per_episode, seed=args.seed)
    print(f"recorded {args.episodes} random-policy episodes to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfs", description="Frame-mask self-supervised RL on toy pixel worlds")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="end-to-end RL with the auxiliary objective")
    _add_config_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain", help="pre-train the encoder on frame packs")
    _add_config_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--packs", required=True, help="a .lfsp file or a directory of them")
    p.add_argument("--out", required=True)
    p.add_argument("--updates", type=int, help="defaults to the pretrain_updates setting")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="deterministic evaluation of a policy checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", help="environment name; defaults to the one trained on")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-values", help="critic values of LNC-selected synthetic vs real observations")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="policy checkpoint; observations are collected afresh")
    src.add_argument("--run", help="run directory whose values.csv window is summarised")
    p.add_argument("--config", help="override the configuration stored in the checkpoint")
    p.add_argument("--batches", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze_values)

    p = sub.add_parser("pack", help="pack per-episode .npy frame arrays into one frame pack")
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("record", help="record random-policy videos as a frame pack")
    _add_config_args(p)
    p.add_argument("--env", default="speedworld")
    p.add_argument("--episodes", type=int, default=320)
    p.add_argument("--frames-per-episode", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_record)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
