"""Command-line entry point: run, check, sweep and validate scenarios."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import checker
from .simnet import ScenarioError, Simulation, load_scenario
from .simnet.adversary import ClassViolation
from .simnet.trace import report, write_report, write_trace
from .sweep import fit, sweep

EXIT_OK, EXIT_REJECT, EXIT_HORIZON, EXIT_PROPERTY = 0, 2, 3, 4


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True) if args.json else text)


def _load(path: str, seed: int | None):
    scenario = load_scenario(path)
    if seed is not None:
        scenario = scenario.with_(seed=seed)
    return scenario


def _schema_error(exc: ScenarioError) -> int:
    for where, msg in exc.errors:
        print(f"schema error at {where}: {msg}", file=sys.stderr)
    return EXIT_REJECT


def cmd_validate(args) -> int:
    try:
        scenario = _load(args.scenario, None)
    except ScenarioError as exc:
        return _schema_error(exc)
    verdict = scenario.verdict()
    _emit(args, {"accepted": verdict.accepted, "reasons": list(verdict.reasons)},
          "accepted" if verdict else "rejected:\n  " + "\n  ".join(verdict.reasons))
    return EXIT_OK if verdict else EXIT_REJECT


def cmd_run(args) -> int:
    try:
        scenario = _load(args.scenario, args.seed)
    except ScenarioError as exc:
        return _schema_error(exc)
    verdict = scenario.verdict()
    if not verdict:
        for reason in verdict.reasons:
            print(f"config rejected: {reason}", file=sys.stderr)
        return EXIT_REJECT
    try:
        sim = Simulation(scenario).run()
    except ClassViolation as exc:
        print(f"config rejected: {exc}", file=sys.stderr)
        return EXIT_REJECT
    out = Path(args.out or f"runs/{scenario.name}-seed{scenario.seed}")
    out.mkdir(parents=True, exist_ok=True)
    write_trace(sim, out / "trace.jsonl")
    write_report(sim, out / "report.json")
    rep = report(sim)
    decided = {p: d["value"] for p, d in rep["decisions"].items() if d["nonfaulty"]}
    _emit(args, rep, f"status {sim.status} at t={sim.now}; decisions {decided}; "
                     f"messages {rep['counters']['messages']['total']}; written to {out}")
    return EXIT_OK if sim.status == "quiescent" else EXIT_HORIZON


def cmd_check(args) -> int:
    try:
        trace = checker.load_trace(args.trace)
    except (checker.TraceError, OSError, json.JSONDecodeError) as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return EXIT_REJECT
    props = checker.PROPERTIES if args.property == "all" else [args.property]
    results = [checker.check(trace, p) for p in props]
    _emit(args, {r.prop: {"ok": r.ok, "detail": r.detail, "event": r.event} for r in results},
          "\n".join(r.line() for r in results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_PROPERTY


def cmd_sweep(args) -> int:
    try:
        template = json.loads(Path(args.template).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read template: {exc}", file=sys.stderr)
        return EXIT_REJECT
    n_list = [int(x) for x in args.n_list.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    try:
        points = sweep(template, n_list, seeds, workers=args.workers)
    except ValueError as exc:
        print(f"sweep rejected: {exc}", file=sys.stderr)
        return EXIT_REJECT
    slopes = {"messages": fit(points, "messages"), "bits": fit(points, "bits")}
    rows = [{"n": p.n, "seed": p.seed, "status": p.status, "messages": p.messages, "bits": p.bits,
             "rounds": p.rounds, "a": p.a} for p in points]
    lines = [f"{'n':>4} {'seed':>5} {'status':>10} {'rounds':>6} {'messages':>10} {'bits':>12}"]
    for p in points:
        lines.append(f"{p.n:>4} {p.seed:>5} {p.status:>10} {p.rounds:>6} {p.messages['total']:>10} {p.bits['total']:>12}")
    for metric, per in slopes.items():
        lines.append(f"{metric} slopes: " + ", ".join(f"{k} {v:.2f}" for k, v in per.items()))
    _emit(args, {"points": rows, "slopes": slopes}, "\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aacons", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write trace.jsonl and report.json")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="evaluate a property suite against a trace")
    p.add_argument("trace")
    p.add_argument("--property", required=True, choices=checker.PROPERTIES + ("all",))
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="run a template over several n and fit log-log slopes")
    p.add_argument("template")
    p.add_argument("--n-list", default="4,8,16")
    p.add_argument("--seeds", default="1")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a scenario against the schema and fault bounds")
    p.add_argument("scenario")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
