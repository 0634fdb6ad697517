"""``capa`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import BASELINE_METHODS, METHODS, SWEEP_AXES, RunConfig
from .errors import ConfigError, CorruptCheckpointError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("capa")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(text.replace(",", " ").split())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run-config INI file")
    common.add_argument("--seed", type=int, help="override [training] root_seed")
    common.add_argument("--deterministic", action="store_true",
                        help="sequential reductions, zeroed wall-time columns")
    common.add_argument("--out", help="override [output] dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="capa", description="CAPA beamforming with implicit neural representations")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write dataset manifests")
    p = sub.add_parser("train", parents=[common], help="train the configured models")
    p.add_argument("--resume", action="store_true", help="continue from the saved training state")
    p = sub.add_parser("eval", parents=[common], help="per-position SE of trained models")
    p.add_argument("--checkpoint", help="evaluate this checkpoint instead of <out>/<model>.ckpt")
    p = sub.add_parser("baseline", parents=[common], help="solve a numerical baseline per position")
    p.add_argument("--method", required=True, choices=BASELINE_METHODS)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--truncation", type=int)
    p.add_argument("--spacing", type=float)
    p = sub.add_parser("sweep", parents=[common], help="mean SE per swept value and method")
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--values", type=_float_list)
    p.add_argument("--methods", type=_str_list)
    p = sub.add_parser("bench", parents=[common], help="inference timing per method (non-normative)")
    p.add_argument("--methods", type=_str_list)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.replace("training", "root_seed", args.seed)
    if args.out is not None:
        cfg = cfg.replace("output", "dir", args.out)
    if args.deterministic:
        cfg = cfg.replace("output", "deterministic", True)
    return cfg


def run(args) -> None:
    cfg = resolve_config(args)
    if getattr(args, "methods", None):
        unknown = [m for m in args.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}")
    if args.command == "gen":
        print(harness.cmd_gen(cfg))
    elif args.command == "train":
        for path in harness.cmd_train(cfg, resume=args.resume).values():
            print(path)
    elif args.command == "eval":
        for path in harness.cmd_eval(cfg, args.checkpoint).values():
            print(path)
    elif args.command == "baseline":
        print(harness.cmd_baseline(cfg, args.method, args.tol, args.max_iter, args.truncation, args.spacing))
    elif args.command == "sweep":
        print(harness.cmd_sweep(cfg, args.axis, args.values, args.methods))
    elif args.command == "bench":
        print(harness.cmd_bench(cfg, args.methods))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigError as exc:
        print(f"capa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptCheckpointError as exc:
        print(f"capa: corrupt checkpoint: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"capa: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"capa: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
