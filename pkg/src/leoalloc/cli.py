"""Command-line entry point: ``leoalloc simulate|sweep|inspect-slot``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .simrunner import SWEEPABLE, inspect_slot, run_episode, sweep


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leoalloc", description="LEO downlink frame allocation simulator")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one episode")
    s.add_argument("--config", required=True)
    s.add_argument("--algorithm", choices=["global", "distributed"])
    s.add_argument("--h-cost", type=float)
    s.add_argument("--n-iter", type=int)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--slots", type=int, help="simulate only the first N slots")
    s.add_argument("--solver-log", action="store_true",
                   help="write per-iteration solver diagnostics under <out>/solver/")

    w = sub.add_parser("sweep", help="one episode per parameter value")
    w.add_argument("--config", required=True)
    w.add_argument("--param", required=True, choices=sorted(SWEEPABLE))
    w.add_argument("--values", required=True, help="comma-separated, e.g. 0,0.1,0.2")
    w.add_argument("--algorithm", choices=["global", "distributed"])
    w.add_argument("--out")
    w.add_argument("--slots", type=int)

    i = sub.add_parser("inspect-slot", help="visible set and rate-table statistics")
    i.add_argument("--config", required=True)
    i.add_argument("--slot", type=int, required=True)
    return p


def _overrides(args) -> dict:
    kw = {}
    if getattr(args, "algorithm", None):
        kw["algorithm"] = args.algorithm
    if getattr(args, "h_cost", None) is not None:
        kw["handover_cost"] = args.h_cost
    if getattr(args, "n_iter", None) is not None:
        kw["solver.n_iter"] = args.n_iter
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    return kw


def _run(args) -> dict:
    cfg = load_config(args.config)
    kw = _overrides(args)
    if kw:
        cfg = cfg.with_overrides(**kw)
    if args.command == "inspect-slot":
        return inspect_slot(cfg, args.slot)
    out = Path(args.out or cfg.output_dir)
    if args.command == "simulate":
        rep = run_episode(cfg, out, num_slots=args.slots, solver_log=args.solver_log)
        return {"out": str(out), **rep.summary()}
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    results = sweep(cfg, args.param, values, out, num_slots=args.slots)
    return {
        "out": str(out),
        "param": args.param,
        "runs": [{"value": v, **rep.summary()} for v, rep in results],
    }


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = _run(args)
    except Exception as exc:  # reported as one JSON line for scripts
        err = {"error": type(exc).__name__, "message": str(exc)}
        slot = getattr(exc, "slot", None)
        if slot is not None:
            err["slot"] = slot
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
