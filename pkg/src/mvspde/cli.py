"""Command line: ``mvspde <simulate|chaos|galerkin|stability|audit|ot> ...``.

Exit codes: 0 success, 1 audit violation, 2 configuration error,
3 numerical blow-up in a required cell.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments, snapshot
from .config import load_config
from .errors import BlowUpError, ConfigurationError, DimensionError
from .experiments import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, RUNNERS
from .measures import METRICS, pairwise_cost, wasserstein2

log = logging.getLogger("mvspde")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvspde", description="Mean-field particle systems for SPDEs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name, help=f"run a {name} experiment from a TOML config")
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", type=Path, help="override the output directory")
        sp.add_argument("--threads", type=int, help="worker threads")
        sp.add_argument("--resume", action="store_true", help="reuse journaled cells")
    ot = sub.add_parser("ot", help="W2 distance between two snapshot files")
    ot.add_argument("a", type=Path)
    ot.add_argument("b", type=Path)
    ot.add_argument("--metric", choices=METRICS, default="state_L2_at_time")
    return p


def _overrides(args) -> dict:
    out: dict = {}
    if args.seed is not None:
        out["seeds"] = {"master": args.seed}
    if args.out is not None:
        out["output"] = {"dir": str(args.out)}
    if args.threads is not None:
        out["workers"] = args.threads
    return out


def _run_ot(args) -> int:
    try:
        a, _ = snapshot.read(args.a)
        b, _ = snapshot.read(args.b)
        d = wasserstein2(pairwise_cost(a, b, args.metric))
    except (OSError, ValueError, DimensionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"w2": d, "metric": args.metric}))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "ot":
        return _run_ot(args)
    try:
        cfg = load_config(args.config, _overrides(args))
        if cfg.kind != args.command:
            raise ConfigurationError(f"config kind {cfg.kind!r} does not match command {args.command!r}")
        out = Path(cfg.output.dir)
        result = RUNNERS[args.command](cfg, out, resume=args.resume, workers=cfg.workers)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as err:
        print(f"blow-up: particle {err.particle} at t={err.time}", file=sys.stderr)
        return EXIT_BLOWUP
    print(json.dumps(result.summary, sort_keys=True, default=str))
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
