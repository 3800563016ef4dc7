"""Command-line front end: ``gptpsim {run,analyze,sweep,list}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .metrics import DEFAULT_EPSILON, MalformedCsv, faults_tolerated, read_csv, summarize
from .scenario import (
    BUILTINS,
    FaultEvent,
    ScenarioError,
    builtin,
    checked,
    format_duration,
    load_scenario,
    parse_duration,
    parse_event,
)
from .simulation import run_scenario

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SWEEP_FAULT_AT = "4s"


class UsageError(Exception):
    pass


def _resolve_seed(flag: int | None, default: int) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("GPTPSIM_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"GPTPSIM_SEED={env!r} is not an integer") from None
    return default


def _load(args):
    if args.builtin:
        if args.builtin not in BUILTINS:
            raise UsageError(f"unknown builtin {args.builtin!r}; try `gptpsim list`")
        cfg = builtin(args.builtin, seed=_resolve_seed(args.seed, 1))
    else:
        cfg = load_scenario(args.scenario)
        cfg = replace(cfg, seed=_resolve_seed(args.seed, cfg.seed))
    if args.duration:
        cfg = checked(replace(cfg, duration=parse_duration(args.duration)))
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = run_scenario(cfg)
    elapsed = time.perf_counter() - t0
    summary = result.summary(args.epsilon)

    from .metrics import emit_csv

    emit_csv(result.records, out / "trace.csv")
    (out / "summary.json").write_text(_summary_doc(cfg, summary), encoding="utf-8")
    (out / "events.log").write_text(result.log.to_text(), encoding="utf-8")

    print(f"{cfg.name}: {format_duration(cfg.duration)} simulated, seed {cfg.seed}, "
          f"{result.event_count} events in {elapsed:.2f}s")
    for ecu in cfg.ecus():
        synced = summary.synced(ecu)
        print(f"  {ecu}: synced in domains {synced}" if synced else f"  {ecu}: NOT synchronized")
    print(f"wrote {out / 'trace.csv'}, {out / 'summary.json'}, {out / 'events.log'}")
    return EXIT_OK


def _summary_doc(cfg, summary) -> str:
    doc = json.loads(summary.to_json())
    doc = {"scenario": cfg.name, "seed": cfg.seed, **doc}
    return json.dumps(doc, indent=2) + "\n"


def _gm_map(args, records) -> dict[int, str]:
    gms: dict[int, str] = {}
    summary_path = Path(args.summary) if args.summary else Path(args.trace).with_name("summary.json")
    if summary_path.exists():
        doc = json.loads(summary_path.read_text(encoding="utf-8"))
        gms.update({int(d): n for d, n in doc.get("domains", {}).items()})
    for spec in args.gm or ():
        d, sep, node = spec.partition("=")
        if not sep:
            raise UsageError(f"--gm expects DOMAIN=NODE, got {spec!r}")
        gms[int(d)] = node
    domains = sorted({r.domain for r in records})
    for d in domains:
        if d in gms:
            continue
        members = {r.node for r in records if r.domain == d}
        corrected = {r.node for r in records if r.domain == d and r.cause == "post_sync"}
        candidates = sorted(members - corrected)
        if len(candidates) != 1:
            raise UsageError(f"cannot tell the grandmaster of domain {d} "
                             f"(candidates: {', '.join(candidates) or 'none'}); pass --gm {d}=NODE")
        gms[d] = candidates[0]
    return gms


def cmd_analyze(args) -> int:
    try:
        records = read_csv(args.trace)
    except MalformedCsv as exc:
        print(f"error: malformed trace: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not records:
        print("error: empty trace", file=sys.stderr)
        return EXIT_USAGE
    gms = _gm_map(args, records)
    summary = summarize(records, gms, args.epsilon)
    print(f"epsilon = {args.epsilon} ns")
    print(f"{'node':<18}{'dom':>4}  {'gm':<16}{'converged_at':>14}{'max|d|_ns':>11}{'p2p_ns':>9}"
          f"{'syncs':>7}{'slope_ppm':>11}")
    for p in summary.pairs.values():
        conv = "not converged" if p.convergence_time is None else format_duration(p.convergence_time)
        fmt = lambda v: "-" if v is None else str(v)
        slope = "-" if p.divergence_slope is None else f"{p.divergence_slope:.3f}"
        print(f"{p.node:<18}{p.domain:>4}  {p.gm:<16}{conv:>14}{fmt(p.max_abs_diff_after_convergence):>11}"
              f"{fmt(p.peak_to_peak):>9}{p.applied_sync_count:>7}{slope:>11}")
    return EXIT_OK


def _family(cfg, name: str | None, custom: list[str]) -> list[FaultEvent]:
    at = parse_duration(SWEEP_FAULT_AT)
    family: list[FaultEvent] = []
    if name == "gm-failures":
        for gm in dict.fromkeys(d.gm for d in cfg.domains):
            family.append(FaultEvent.clock_failure(gm, at))
    elif name == "ring-links":
        family += [FaultEvent.link_failure(lk.id, at) for lk in cfg.links if lk.id.startswith("ring_")]
        if not family:
            raise UsageError("scenario has no links named ring_*")
    elif name is not None:
        raise UsageError(f"unknown family {name!r}")
    for text in custom:
        try:
            family.append(parse_event(text))
        except ValueError as exc:
            raise UsageError(f"bad --fault {text!r}: {exc}") from None
    if not family:
        raise UsageError("give --family and/or --fault")
    if len(family) > 8:
        raise UsageError("fault families are limited to 8 candidates (exhaustive sweep)")
    checked(replace(cfg, events=tuple(cfg.events) + tuple(family)))
    return family


def cmd_sweep(args) -> int:
    cfg = _load(args)
    family = _family(cfg, args.family, args.fault or [])
    t0 = time.perf_counter()
    res = faults_tolerated(cfg, family, args.epsilon, jobs=args.jobs)
    elapsed = time.perf_counter() - t0
    print(f"{cfg.name}: family of {len(family)}: {', '.join(f.describe() for f in family)}")
    print(f"k = {res.k} ({res.runs} runs, {elapsed:.1f}s)")
    if res.witness is not None:
        print(f"witness: {', '.join(f.describe() for f in res.witness) or '(no faults)'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {
            "scenario": cfg.name, "seed": cfg.seed, "k": res.k,
            "witness": None if res.witness is None else [f.describe() for f in res.witness],
            "runs": [{"faults": [f.describe() for f in s], "all_ecus_synced": ok} for s, ok in res.outcomes],
        }
        (out / "sweep.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in BUILTINS:
        print(f"{name:<12} {builtin(name).description}")
    return EXIT_OK


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", metavar="NAME", help="built-in scenario (see `gptpsim list`)")
    src.add_argument("--scenario", metavar="PATH", help="scenario file")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: $GPTPSIM_SEED, else 1)")
    p.add_argument("--duration", metavar="DUR", help="override simulated duration, e.g. 10s")
    p.add_argument("--epsilon", type=int, default=DEFAULT_EPSILON, help="convergence band in ns (default 1000)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gptpsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write trace.csv, summary.json, events.log")
    _add_source(p)
    p.add_argument("--out", default="out", metavar="DIR", help="output directory (created if absent)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="metrics from a trace.csv")
    p.add_argument("trace")
    p.add_argument("--epsilon", type=int, default=DEFAULT_EPSILON)
    p.add_argument("--summary", help="summary.json naming each domain's grandmaster "
                                     "(default: next to the trace)")
    p.add_argument("--gm", action="append", metavar="DOMAIN=NODE", help="grandmaster of a domain")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="maximum number of tolerated faults over a fault family")
    _add_source(p)
    p.add_argument("--family", choices=("gm-failures", "ring-links"))
    p.add_argument("--fault", action="append", metavar="EVENT",
                   help="extra candidate, e.g. 'link_failure link=edge_fl at=3s'")
    p.add_argument("--jobs", type=int, default=1, help="parallel simulations")
    p.add_argument("--out", metavar="DIR", help="also write sweep.json here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("list", help="list built-in scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ScenarioError as exc:
        print("error: invalid scenario:", file=sys.stderr)
        for issue in exc.issues:
            print(f"  {issue}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
