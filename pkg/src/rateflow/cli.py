"""Command line front end: plan, simulate, sweep, gen-model.

Exit codes: 0 success, 1 usage or validation failure, 2 functional
mismatch between the pipeline and the reference, 3 simulation deadlock.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .dse import (
    DseError,
    estimate_resources,
    estimate_throughput,
    load_plan,
    plan_network,
    plan_to_dict,
)
from .kpu_schedule import ScheduleError
from .model_ir import ModelError, ModelGraph, graph_from_dict, load_model
from .rates import Rate
from .report import plan_report, sim_report, sweep_csv
from .simulator import DeadlockError, SimError, simulate
from .topologies import GENERATORS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISMATCH = 2
EXIT_DEADLOCK = 3


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="model description JSON")
    p.add_argument("--gen", choices=sorted(GENERATORS),
                   help="generate a built-in topology instead of loading one")
    p.add_argument("--size", type=int, default=224,
                   help="input edge length for --gen (default 224)")
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                   help="weight seed override (int, 0x.. accepted)")


def _resolve_model(args) -> ModelGraph:
    if bool(args.model) == bool(args.gen):
        raise ModelError("exactly one of --model or --gen is required")
    if args.model:
        return load_model(args.model, seed=args.seed)
    doc = GENERATORS[args.gen](args.size, seed=args.seed)
    return graph_from_dict(doc, seed=args.seed, name=f"{args.gen}_{args.size}")


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rateflow",
        description="Exact-rate planning and cycle simulation for "
                    "continuous-flow CNN pipelines.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="select per-layer implementations")
    _add_model_args(p)
    p.add_argument("--rate", required=True, help="input rate, e.g. 3 or 3/4")
    p.add_argument("--strategy", choices=["proposed", "legacy"],
                   default="proposed")
    p.add_argument("--clock-mhz", type=float, default=None,
                   help="project FPS at this clock")
    p.add_argument("--format", choices=["md", "csv", "json"], default="md")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--plan-out", help="also write the plan JSON here")

    p = sub.add_parser("simulate", help="run the planned pipeline by cycles")
    _add_model_args(p)
    p.add_argument("--rate", help="input rate (ignored with --plan)")
    p.add_argument("--plan", help="load a plan JSON instead of planning")
    p.add_argument("--strategy", choices=["proposed", "legacy"],
                   default="proposed")
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--no-strict", action="store_true",
                   help="skip plan validation (observe rounding effects)")
    p.add_argument("--trace", help="write a per-cycle event CSV here")
    p.add_argument("--format", choices=["md", "csv", "json"], default="md")
    p.add_argument("--out", help="write the report here instead of stdout")

    p = sub.add_parser("sweep", help="plan one model across several rates")
    _add_model_args(p)
    p.add_argument("--rates", required=True,
                   help="comma separated, e.g. 6,3,3/2,3/4")
    p.add_argument("--strategy", choices=["proposed", "legacy"],
                   default="proposed")
    p.add_argument("--clock-mhz", type=float, default=400.0)
    p.add_argument("--out", help="write the CSV here instead of stdout")

    p = sub.add_parser("gen-model", help="write a built-in topology as JSON")
    p.add_argument("name", choices=sorted(GENERATORS))
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--classes", type=int, default=1000)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None)
    p.add_argument("--out", required=True)

    return ap


def _cmd_plan(args) -> int:
    graph = _resolve_model(args)
    plan = plan_network(graph, Rate.parse(args.rate), strategy=args.strategy)
    if args.plan_out:
        Path(args.plan_out).write_text(json.dumps(plan_to_dict(plan), indent=2))
    _emit(plan_report(plan, fmt=args.format, f_clk_mhz=args.clock_mhz),
          args.out)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    graph = _resolve_model(args)
    if args.plan:
        plan = load_plan(graph, args.plan)
    else:
        if not args.rate:
            raise DseError("--rate is required when no --plan is given")
        plan = plan_network(graph, Rate.parse(args.rate),
                            strategy=args.strategy)
    rep = simulate(graph, plan, frames=args.frames,
                   strict=not args.no_strict, trace_path=args.trace)
    _emit(sim_report(rep, fmt=args.format), args.out)
    return EXIT_OK if rep.functional_pass else EXIT_MISMATCH


def _cmd_sweep(args) -> int:
    graph = _resolve_model(args)
    entries = []
    for token in args.rates.split(","):
        token = token.strip()
        if not token:
            continue
        plan = plan_network(graph, Rate.parse(token), strategy=args.strategy)
        entries.append((token, plan, estimate_throughput(plan, args.clock_mhz),
                        estimate_resources(plan)))
    if not entries:
        raise DseError("--rates produced no rates")
    _emit(sweep_csv(entries), args.out)
    return EXIT_OK


def _cmd_gen_model(args) -> int:
    doc = GENERATORS[args.name](args.size, classes=args.classes,
                                seed=args.seed)
    Path(args.out).write_text(json.dumps(doc, indent=2))
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    handlers = {
        "plan": _cmd_plan,
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "gen-model": _cmd_gen_model,
    }
    try:
        return handlers[args.command](args)
    except DeadlockError as exc:
        print(f"deadlock: {exc}", file=sys.stderr)
        return EXIT_DEADLOCK
    except (ModelError, DseError, ScheduleError, SimError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
