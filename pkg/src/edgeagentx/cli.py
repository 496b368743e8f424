"""Command-line entry points.

Exit codes: 0 success, 1 configuration error, 2 runtime/training failure,
3 I/O failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import VARIANT_MODE, Variant, parse_config
from .env import ConfigError
from .harness import compare_variants, run_experiment
from .nets import load_checkpoint, param_count

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


def _load_config(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)
    try:
        return parse_config(text)
    except ConfigError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _apply_overrides(config, args):
    try:
        if args.variant is not None:
            variant = Variant(args.variant)
            config = replace(config, variant=variant,
                             hyper=replace(config.hyper,
                                           mode=VARIANT_MODE[variant]))
        if args.seed_override is not None:
            config = replace(config, seeds=(args.seed_override,))
        if args.episodes is not None:
            config = replace(config, episodes=args.episodes)
        if args.out is not None:
            config = replace(config, output_dir=args.out)
        config.validate()
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    return config


def cmd_run(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    try:
        summaries = run_experiment(config)
    except IOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - surface as runtime failure
        print(f"error: training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for s in summaries:
        conv = s.convergence_episode if s.convergence_episode is not None else "-"
        flag = " [diverged]" if s.diverged else ""
        print(f"seed {s.seed}: reward {s.final_window_reward:.4f}  "
              f"latency {s.final_latency_ms:.2f} ms  "
              f"throughput {s.final_throughput:.4f}/s  converged@{conv}{flag}")
    if any(s.diverged for s in summaries):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_compare(args) -> int:
    base = _load_config(args.config)
    try:
        variants = [Variant(v.strip()) for v in args.variants.split(",") if v.strip()]
        if not variants:
            raise ValueError("no variants given")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    configs = [replace(base, variant=v,
                       hyper=replace(base.hyper, mode=VARIANT_MODE[v]))
               for v in variants]
    try:
        stats = compare_variants(configs)
    except IOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        print(f"error: comparison failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print((Path(base.output_dir) / "comparison.txt").read_text(encoding="utf-8"),
          end="")
    return EXIT_OK


def cmd_checkpoint(args) -> int:
    try:
        flat = load_checkpoint(args.infile)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"layers: {len(flat.shapes)}")
    for k, (n_in, n_out) in enumerate(flat.shapes):
        print(f"  layer {k}: {n_in} -> {n_out}")
    print(f"parameters: {param_count(flat.shapes)}")
    print(f"value range: [{flat.values.min():.6g}, {flat.values.max():.6g}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeagentx",
        description="Federated multi-agent RL experiments on a mesh-network simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment variant")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed-override", type=int, default=None)
    p_run.add_argument("--variant", default=None,
                       choices=[v.value for v in Variant])
    p_run.add_argument("--episodes", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run and compare several variants")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--variants", required=True,
                       help="comma-separated variant names")
    p_cmp.set_defaults(func=cmd_compare)

    p_ck = sub.add_parser("checkpoint", help="inspect a checkpoint file")
    p_ck.add_argument("--in", dest="infile", required=True)
    p_ck.add_argument("--info", action="store_true", default=True)
    p_ck.set_defaults(func=cmd_checkpoint)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
