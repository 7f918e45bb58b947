"""Command-line interface.

Subcommands: gen-data, train, eval, sweep, render. Exit codes: 0 success,
1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .config import RunConfig, ValidationError, apply_override, load_config
from .harness import (MODEL_KINDS, SWEEP_AXES, cmd_eval, cmd_gen_data,
                      cmd_render_overlays, cmd_sweep, cmd_train)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set loss.gamma=4")


def _shortcut_overrides(args) -> list[str]:
    pairs = []
    if getattr(args, "eta", None) is not None:
        pairs.append(f"loss.eta={args.eta}")
    if getattr(args, "gamma", None) is not None:
        pairs.append(f"loss.gamma={args.gamma}")
    if getattr(args, "alpha", None) is not None:
        pairs.append(f"loss.alpha={args.alpha}")
    if getattr(args, "tau", None) is not None:
        pairs.append(f"loss.tau={args.tau}")
    if getattr(args, "ratio", None) is not None:
        pairs.append(f"optim.ratio={args.ratio}")
    if getattr(args, "k", None) is not None:
        parts = [p for p in args.k.split(",") if p.strip()]
        if len(parts) != 2:
            raise ValidationError(f"--k expects two comma-separated values, got {args.k!r}")
        pairs.append(f"eval.k_single={parts[0]}")
        pairs.append(f"eval.k_multi={parts[1]}")
    return pairs


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for pair in _shortcut_overrides(args) + list(args.set):
        if "=" not in pair:
            raise ValidationError(f"--set expects KEY=VALUE, got {pair!r}")
        key, _, raw = pair.partition("=")
        apply_override(cfg, key.strip(), raw.strip())
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakloc")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="dataset directory")

    p = sub.add_parser("train", help="train a model and evaluate per epoch")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--model", default="bcd",
                   choices=[k.replace("_", "-") for k in MODEL_KINDS])
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--ratio")
    p.add_argument("--k", help="k values as 'single,multi'")

    p = sub.add_parser("eval", help="evaluate a predictions file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--k", default="1,5", help="k values as 'single,multi'")
    p.add_argument("--out", help="metrics CSV path (stdout when omitted)")

    p = sub.add_parser("sweep", help="train once per axis value, aggregate a table")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="sweep directory")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="comma-separated axis values, e.g. 4,2,1,0.5")
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--model", default="bcd",
                   choices=[k.replace("_", "-") for k in MODEL_KINDS])
    p.add_argument("--parallel", type=int, default=1,
                   help="worker processes (1 = sequential)")

    p = sub.add_parser("render", help="draw ground-truth and predicted boxes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True, help="overlay output directory")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            cfg = _load_run_config(args)
            cmd_gen_data(cfg, args.out)
        elif args.command == "train":
            cfg = _load_run_config(args)
            cmd_train(cfg, args.model.replace("-", "_"), args.out)
        elif args.command == "eval":
            parts = [p for p in args.k.split(",") if p.strip()]
            if len(parts) != 2:
                raise ValidationError(f"--k expects two comma-separated values, got {args.k!r}")
            report = cmd_eval(args.manifest, args.predictions,
                              k_single=int(parts[0]), k_multi=int(parts[1]),
                              out_csv=args.out)
            if args.out is None:
                sys.stdout.write(report.to_csv())
        elif args.command == "sweep":
            cfg = _load_run_config(args)
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            seeds = ([int(s) for s in args.seeds.split(",") if s.strip()]
                     if args.seeds else [cfg.seed])
            cmd_sweep(cfg, args.axis, values, seeds, args.out,
                      model_kind=args.model.replace("-", "_"),
                      parallel=args.parallel)
        elif args.command == "render":
            cmd_render_overlays(args.manifest, args.predictions, args.out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())
