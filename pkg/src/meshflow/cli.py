"""Command line: ``meshflow validate|run|export SCENARIO``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import TextIO

from .scenario import ScenarioError, load_file
from .simulator import Simulation, SimulationError

__all__ = ["main", "main_entry", "build_parser"]

TRACE_ENV = "MESHFLOW_TRACE"
STATS_ENV = "MESHFLOW_STATS"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshflow", description="Typed dataflow service mesh simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario and print every violation")
    v.add_argument("path")

    r = sub.add_parser("run", help="simulate a scenario, writing trace and stats")
    r.add_argument("path")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--horizon", type=int, default=None)
    r.add_argument("--trace", default=None, help=f"trace file ('-' for stdout; default ${TRACE_ENV} or <name>.trace)")
    r.add_argument("--stats", default=None, help=f"stats file ('-' for stdout; default ${STATS_ENV} or <name>.stats)")
    r.add_argument("--no-check", action="store_true", help="skip per-tick invariant checks")

    e = sub.add_parser("export", help="print the mesh or a service graph as adjacency text")
    e.add_argument("path")
    e.add_argument("--what", default="mesh", help="'mesh' or 'service:<name>'")
    e.add_argument("--active-at", type=int, default=None, metavar="T")
    return p


def _load(path: str, err: TextIO):
    try:
        return load_file(path)
    except OSError as exc:
        print(f"{path}: cannot read: {exc.strerror or exc}", file=err)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(d, file=err)
    return None


def _write(target: str, text: str, out: TextIO) -> None:
    if target == "-":
        out.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


def cmd_validate(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    scenario = _load(args.path, out)
    if scenario is None:
        return 1
    try:
        Simulation(scenario)
    except (SimulationError, ValueError) as exc:
        print(f"{args.path}: {exc}", file=out)
        return 1
    print("ok", file=out)
    return 0


def cmd_run(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    scenario = _load(args.path, err)
    if scenario is None:
        return 1
    stem = Path(args.path).stem
    trace = args.trace or os.environ.get(TRACE_ENV) or f"{stem}.trace"
    stats = args.stats or os.environ.get(STATS_ENV) or f"{stem}.stats"
    try:
        sim = Simulation(scenario, seed=args.seed, horizon=args.horizon, checking=not args.no_check)
        result = sim.run()
    except (SimulationError, ValueError) as exc:
        print(f"{args.path}: {exc}", file=err)
        return 1
    _write(trace, result.trace_text(), out)
    _write(stats, result.stats.text(), out)
    for line in result.errors:
        print(f"{args.path}: {line}", file=err)
    return 0


def cmd_export(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    scenario = _load(args.path, err)
    if scenario is None:
        return 1
    try:
        if args.active_at is not None:
            if args.active_at < 0:
                print("--active-at must be a natural number", file=err)
                return 2
            sim = Simulation(scenario, horizon=args.active_at)
            sim.run()
        else:
            sim = Simulation(scenario)
    except (SimulationError, ValueError) as exc:
        print(f"{args.path}: {exc}", file=err)
        return 1
    if args.what == "mesh":
        out.write(sim.mesh.to_text(active_only=args.active_at is not None))
        return 0
    if args.what.startswith("service:"):
        name = args.what.split(":", 1)[1]
        sc = sim.sidecars.get(name)
        if sc is None:
            print(f"unknown service {name!r}", file=err)
            return 1
        graph = sc.instance(1).graph if args.active_at is not None else sc.service.graph
        out.write(graph.to_text(scenario.registry))
        return 0
    print(f"--what must be 'mesh' or 'service:<name>', not {args.what!r}", file=err)
    return 2


def main(argv: list[str] | None = None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    handler = {"validate": cmd_validate, "run": cmd_run, "export": cmd_export}[args.command]
    return handler(args, out, err)


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
