"""Command-line front end.

Subcommands: simulate, gen, parse, attack, bench, verify.  All outputs
are deterministic for a given flag set and seed once ``--no-timestamp``
suppresses the generation timestamp and measured wall times.  Exit
codes: 0 success, 1 data error, 2 usage error.
"""

import argparse
import dataclasses
import io
import json
import os
import random
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import fixtures
from .attacks import SCENARIOS, SUPPORTED, AttackScenario, run_attack, \
    write_outcomes_csv
from .oracle import FlatTagArray
from .pagestore import PageTagStore, tag_width
from .policies import POLICIES
from .sim import SimConfig, rows_to_csv, simulate, summarize
from .trace import (PRESETS, WorkloadSpec, gen_workload, normalize,
                    parse_valgrind, preset_events, read_canonical,
                    write_canonical)

DEFAULT_GOLDEN = Path(__file__).resolve().parents[2] / "golden"
SEED_ENV = "TAGMEM_SEED"


def _default_seed():
    try:
        return int(os.environ.get(SEED_ENV, "0"))
    except ValueError:
        return 0


def _timestamp():
    return datetime.now(timezone.utc).isoformat()


def _parse_widths(text):
    try:
        widths = tuple(int(part) for part in text.split(","))
        for bits in widths:
            tag_width(bits)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not widths:
        raise argparse.ArgumentTypeError("empty width list")
    return widths


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _emit(text, out_path):
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _json_dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_events(args, parser):
    if args.trace:
        try:
            text = Path(args.trace).read_text()
        except OSError as exc:
            print(f"error: cannot read trace: {exc}", file=sys.stderr)
            raise SystemExit(1)
        first = next((ln for ln in text.splitlines() if ln.strip()), "")
        if first.startswith("--"):
            events, _stats = parse_valgrind(io.StringIO(text))
        else:
            try:
                events = read_canonical(io.StringIO(text))
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                raise SystemExit(1)
        name = Path(args.trace).name
    else:
        if args.workload not in PRESETS:
            parser.error(f"unknown workload preset: {args.workload!r}")
        events = preset_events(args.workload)
        name = args.workload
    return name, events


def _cmd_simulate(args, parser):
    name, events = _load_events(args, parser)
    events, warnings = normalize(events, strict=False)
    if warnings and args.strict:
        for w in warnings:
            print(f"error: {w}", file=sys.stderr)
        return 1
    config = SimConfig(policy=args.policy, widths=args.widths, seed=args.seed,
                       oracle=args.oracle, metadata_granule=args.metadata)
    report = simulate(events, config)
    report.warnings = warnings + report.warnings
    rows = summarize([(name, report)])
    if args.format == "csv":
        buf = io.StringIO()
        if not args.no_timestamp:
            buf.write(f"# generated_at {_timestamp()}\n")
        rows_to_csv(rows, buf)
        _emit(buf.getvalue(), args.out)
    else:
        payload = {"workload": name,
                   "report": report.to_dict(include_timing=not args.no_timestamp),
                   "summary": rows}
        if not args.no_timestamp:
            payload["generated_at"] = _timestamp()
        _emit(_json_dump(payload), args.out)
    if args.oracle and any(ws.oracle_mismatches
                           for ws in report.widths.values()):
        print("error: oracle mismatches detected", file=sys.stderr)
        return 1
    return 0


def _cmd_gen(args, parser):
    if args.workload not in PRESETS:
        parser.error(f"unknown workload preset: {args.workload!r}")
    spec = PRESETS[args.workload]
    if spec is None:
        events = preset_events(args.workload)
    else:
        overrides = {}
        if args.events is not None:
            overrides["events"] = args.events
        if args.seed is not None:
            overrides["seed"] = args.seed
        events = gen_workload(dataclasses.replace(spec, **overrides))
    buf = io.StringIO()
    write_canonical(events, buf)
    _emit(buf.getvalue(), args.out)
    return 0


def _cmd_parse(args, parser):
    try:
        text = Path(args.infile).read_text()
    except OSError as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return 1
    events, stats = parse_valgrind(io.StringIO(text))
    if args.strict and stats.skipped:
        print(f"error: {stats.skipped} unrecognized lines", file=sys.stderr)
        return 1
    buf = io.StringIO()
    write_canonical(events, buf)
    _emit(buf.getvalue(), args.out)
    print(f"recognized {stats.recognized} events, skipped {stats.skipped} "
          f"lines, {stats.null_frees} null frees", file=sys.stderr)
    return 0


def _cmd_attack(args, parser):
    if args.policy not in SUPPORTED.get(args.scenario, ()):  # includes typos
        parser.error(
            f"scenario {args.scenario!r} is not defined for policy "
            f"{args.policy!r}")
    scenario = AttackScenario(args.scenario, args.policy, args.trials,
                              match_all=args.match_all)
    outcome = run_attack(scenario, args.seed)
    if args.format == "json":
        payload = {"scenario": outcome.kind, "policy": outcome.policy,
                   "trials": outcome.trials, "successes": outcome.successes,
                   "rate": outcome.rate,
                   "expected": None if outcome.expected is None
                   else float(outcome.expected)}
        if not args.no_timestamp:
            payload["generated_at"] = _timestamp()
        _emit(_json_dump(payload), args.out)
    else:
        buf = io.StringIO()
        if not args.no_timestamp:
            buf.write(f"# generated_at {_timestamp()}\n")
        write_outcomes_csv([outcome], buf)
        _emit(buf.getvalue(), args.out)
    return 0


def _bench_one(bits, ops, seed):
    rng = random.Random(seed)
    stream = []
    for _ in range(ops):
        if rng.random() < 0.5:
            stream.append(("stg", rng.randrange(256), rng.randrange(8)))
        else:
            stream.append(("ldg", rng.randrange(256), 0))
    store = PageTagStore(bits)
    arr = FlatTagArray(bits)
    results = {}
    for name, target in (("btree", store), ("array", arr)):
        t0 = time.perf_counter()
        for op, g, t in stream:
            if op == "stg":
                target.stg(g, t)
            else:
                target.ldg(g)
        results[name] = (time.perf_counter() - t0) / ops * 1e9
    checksum = sum(g * 31 + t for _, g, t in stream) & 0xFFFFFFFF
    return {"width_bits": bits, "ops": ops, "stream_checksum": checksum,
            "btree_ns_per_op": results["btree"],
            "array_ns_per_op": results["array"],
            "ratio": results["btree"] / results["array"]}


def _cmd_bench(args, parser):
    rows = [_bench_one(bits, args.ops, args.seed) for bits in args.widths]
    for row in rows:
        print(f"{row['width_bits']:2d}-bit: btree {row['btree_ns_per_op']:8.1f} "
              f"ns/op, array {row['array_ns_per_op']:8.1f} ns/op, ratio "
              f"{row['ratio']:.2f}", file=sys.stderr)
    if args.no_timestamp:
        for row in rows:
            row["btree_ns_per_op"] = None
            row["array_ns_per_op"] = None
            row["ratio"] = None
    payload = {"ops": args.ops, "seed": args.seed, "rows": rows}
    if not args.no_timestamp:
        payload["generated_at"] = _timestamp()
    _emit(_json_dump(payload), args.out)
    return 0


def _cmd_verify(args, parser):
    golden = Path(args.golden)
    if args.regen:
        fixtures.regenerate(golden)
        print(f"regenerated fixtures under {golden}", file=sys.stderr)
        return 0
    failures = fixtures.verify(golden)
    names = (list(fixtures.PAGE_FIXTURES) +
             ["pac/vectors.json", "attacks/expected.json", "traces"])
    for name in names:
        related = [f for f in failures if f.startswith(name) or
                   f.startswith(f"pages/{name}")]
        status = "FAIL" if related else "ok"
        print(f"{status:4s} {name}")
        for f in related:
            print(f"     {f}")
    leftover = [f for f in failures
                if not any(f.startswith(n) or f.startswith(f"pages/{n}")
                           for n in names)]
    for f in leftover:
        print(f"FAIL {f}")
    return 1 if failures else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tagmem",
        description="Compressed tag storage and tagged-memory simulation")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _default_seed()

    p = sub.add_parser("simulate", help="replay a trace through a policy")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="trace file (canonical or --trace-malloc)")
    src.add_argument("--workload", help="synthetic preset name")
    p.add_argument("--policy", default="glibc", choices=sorted(POLICIES))
    p.add_argument("--widths", type=_parse_widths, default=(4, 8, 16, 32))
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--oracle", type=_on_off, default=False,
                   help="per-event full-page verification (on/off)")
    p.add_argument("--metadata", type=_on_off, default=True,
                   help="tag a metadata granule ahead of each allocation")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--no-timestamp", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gen", help="emit a synthetic trace")
    p.add_argument("--workload", required=True)
    p.add_argument("--events", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("parse", help="convert a --trace-malloc log")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("attack", help="run a Monte Carlo attack scenario")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--policy", required=True, choices=sorted(POLICIES))
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--match-all", type=_on_off, default=True, dest="match_all")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--no-timestamp", action="store_true")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("bench", help="per-op latency of the tree vs the array")
    p.add_argument("--widths", type=_parse_widths, default=(4, 8, 16, 32))
    p.add_argument("--ops", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out")
    p.add_argument("--no-timestamp", action="store_true")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("verify", help="diff the committed golden fixtures")
    p.add_argument("--golden", default=str(DEFAULT_GOLDEN))
    p.add_argument("--regen", action="store_true")
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "trials", None) is not None and args.command == "attack" \
            and args.trials < 1:
        parser.error("--trials must be >= 1")
    if getattr(args, "ops", None) is not None and args.command == "bench" \
            and args.ops < 1:
        parser.error("--ops must be >= 1")
    try:
        return args.func(args, parser)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
