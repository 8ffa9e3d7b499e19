"""Trace-driven evaluation of the adaptive tag stores.

Replays a heap trace through a tagging policy onto one set of per-page
stores per configured tag width.  The policy's granule writes are decided
once per event and applied identically to every width's store set, so the
only cross-width difference is how long each page's tree fits its buffer;
that makes "fraction of pages still on the BTree" exactly comparable (and
monotone) across widths.

Collected per width: how many pages stayed on the BTree, peak total
space against the flat-array budget, per-page peak run counts, depth
statistics, and operation counts.
"""

import random
import time
from dataclasses import dataclass, field

from .oracle import FlatTagArray, runs_of
from .pagestore import PAGE_BUFFER_BYTES, PageTagStore, tag_width
from .policies import make_policy
from .trace import CALLOC, FREE, MALLOC, REALLOC, preset_events

_ARRAY_EIGHTHS = PAGE_BUFFER_BYTES * 8


@dataclass
class SimConfig:
    policy: str = "glibc"
    widths: tuple = (4, 8, 16, 32)
    seed: int = 0
    oracle: bool = False
    metadata_granule: bool = True
    check_mode: str = "off"   # reserved; replay itself performs no tag checks

    def __post_init__(self):
        if not self.widths:
            raise ValueError("at least one tag width is required")
        for bits in self.widths:
            tag_width(bits)


@dataclass
class WidthStats:
    width_bits: int
    pages_total: int = 0
    pages_still_btree: int = 0
    fraction_btree: float = 1.0
    max_total_space_bytes: float = 0.0
    space_ratio: float = 1.0
    avg_max_runs_per_page: float = 0.0
    max_runs_any_page: int = 0
    depth_avg: float = 1.0
    depth_max: int = 1
    stg_ops: int = 0
    ldg_ops: int = 0
    switch_events: int = 0
    oracle_mismatches: int = 0


@dataclass
class SimReport:
    policy: str
    seed: int
    event_count: int
    widths: dict
    warnings: list = field(default_factory=list)
    rejected_frees: int = 0
    wall_time_s: float | None = None

    def fraction_by_width(self):
        return {bits: ws.fraction_btree for bits, ws in self.widths.items()}

    def to_dict(self, include_timing=True):
        d = {
            "policy": self.policy,
            "seed": self.seed,
            "event_count": self.event_count,
            "warnings": list(self.warnings),
            "rejected_frees": self.rejected_frees,
            "widths": {str(bits): vars(ws).copy()
                       for bits, ws in sorted(self.widths.items())},
        }
        if include_timing:
            d["wall_time_s"] = self.wall_time_s
        return d


class _Replay:
    """Mutable per-width state during one simulation pass."""

    def __init__(self, bits):
        self.w = tag_width(bits)
        self.stores = {}
        self.space_eighths = 0
        self.max_space_eighths = 0
        self.stg_ops = 0
        self.depth_max = 1

    def _space_of(self, store):
        if store.mode == "array":
            return _ARRAY_EIGHTHS
        return 25 + store.node_count * self.w.node_size * 8

    def page(self, index):
        st = self.stores.get(index)
        if st is None:
            st = PageTagStore(self.w.bits)
            self.stores[index] = st
            self.space_eighths += self._space_of(st)
        return st

    def write(self, page_index, granule, count, tag):
        st = self.page(page_index)
        before = self._space_of(st)
        st.stg_range(granule, count, tag)
        self.space_eighths += self._space_of(st) - before
        self.stg_ops += 1
        if st.mode == "btree":
            self.depth_max = max(self.depth_max, st.depth())


def _split_granule_writes(addr, granule_count, tag):
    """Split one byte-addressed granule write into per-page pieces."""
    g = addr >> 4
    remaining = granule_count
    while remaining > 0:
        page_index, gran = g >> 8, g & 0xFF
        chunk = min(remaining, 256 - gran)
        yield page_index, gran, chunk, tag
        g += chunk
        remaining -= chunk


def simulate(events, config):
    """Replay a normalized event stream; returns a SimReport."""
    started = time.perf_counter()
    policy = make_policy(config.policy, random.Random(config.seed),
                         metadata=config.metadata_granule)
    replays = {bits: _Replay(bits) for bits in config.widths}
    oracle_pages = {} if config.oracle else None
    oracle_mismatches = 0
    ldg_ops = 0
    live = {}
    page_max_runs = {}
    rejected = 0
    warnings = []
    probe = replays[config.widths[0]]

    def apply_writes(writes):
        nonlocal oracle_mismatches, ldg_ops
        touched = set()
        for addr, count, tag in writes:
            for page_index, gran, chunk, wtag in \
                    _split_granule_writes(addr, count, tag):
                for rep in replays.values():
                    rep.write(page_index, gran, chunk, wtag)
                if oracle_pages is not None:
                    arr = oracle_pages.setdefault(page_index, FlatTagArray(4))
                    arr.stg_range(gran, chunk, wtag)
                touched.add(page_index)
        for page_index in touched:
            runs = probe.stores[page_index].run_count
            prev = page_max_runs.get(page_index, 0)
            if runs > prev:
                page_max_runs[page_index] = runs
        if oracle_pages is not None:
            for page_index in touched:
                expect = runs_of(oracle_pages[page_index].tags)
                ldg_ops += 256
                for rep in replays.values():
                    if rep.stores[page_index].enumerate_runs() != expect:
                        oracle_mismatches += 1

    for ev in events:
        if ev.kind in (MALLOC, CALLOC):
            result = policy.malloc(ev.new_addr, ev.size)
            live[ev.new_addr] = result.record
            apply_writes(result.writes)
        elif ev.kind == REALLOC:
            rec = live.pop(ev.old_addr, None)
            writes = []
            if rec is not None:
                res = policy.free(rec, rec.pointer_tag)
                rejected += res.rejected
                writes += res.writes
            else:
                warnings.append(
                    f"event {ev.seq}: realloc of unknown address "
                    f"{ev.old_addr:#x}")
            result = policy.malloc(ev.new_addr, ev.size)
            live[ev.new_addr] = result.record
            apply_writes(writes + result.writes)
        elif ev.kind == FREE:
            rec = live.pop(ev.old_addr, None)
            if rec is None:
                warnings.append(
                    f"event {ev.seq}: free of unknown address "
                    f"{ev.old_addr:#x}")
                continue
            res = policy.free(rec, rec.pointer_tag)
            rejected += res.rejected
            apply_writes(res.writes)
        else:
            raise ValueError(f"bad event kind: {ev.kind!r}")
        for rep in replays.values():
            if rep.space_eighths > rep.max_space_eighths:
                rep.max_space_eighths = rep.space_eighths

    report = SimReport(config.policy, config.seed, len(events), {},
                       warnings, rejected,
                       wall_time_s=time.perf_counter() - started)
    for bits, rep in replays.items():
        ws = WidthStats(bits)
        ws.pages_total = len(rep.stores)
        ws.pages_still_btree = sum(
            1 for st in rep.stores.values() if st.mode == "btree")
        ws.fraction_btree = (ws.pages_still_btree / ws.pages_total
                             if ws.pages_total else 1.0)
        ws.max_total_space_bytes = rep.max_space_eighths / 8.0
        budget = PAGE_BUFFER_BYTES * ws.pages_total
        ws.space_ratio = (rep.max_space_eighths / 8.0 / budget
                          if budget else 1.0)
        if page_max_runs:
            ws.avg_max_runs_per_page = \
                sum(page_max_runs.values()) / len(page_max_runs)
            ws.max_runs_any_page = max(page_max_runs.values())
        depths = [st.depth() for st in rep.stores.values()
                  if st.mode == "btree"]
        ws.depth_avg = sum(depths) / len(depths) if depths else 1.0
        ws.depth_max = rep.depth_max
        ws.stg_ops = rep.stg_ops
        ws.ldg_ops = ldg_ops
        ws.switch_events = sum(st.switch_count
                               for st in rep.stores.values())
        ws.oracle_mismatches = oracle_mismatches
        report.widths[bits] = ws
    return report


def simulate_preset(name, config):
    return simulate(preset_events(name), config)


_ROW_FIELDS = ["workload", "policy", "width_bits", "pages_total",
               "pages_still_btree", "fraction_btree", "max_total_space_bytes",
               "space_ratio", "avg_max_runs_per_page", "max_runs_any_page",
               "depth_avg", "depth_max", "stg_ops", "ldg_ops",
               "switch_events", "oracle_mismatches", "warnings",
               "fraction_monotone_nonincreasing"]


def summarize(named_reports):
    """Comparison rows for a set of (workload name, SimReport) pairs.

    Each row carries a ``fraction_monotone_nonincreasing`` flag, the
    measured relationship between tag width and BTree retention for that
    workload (reported, not asserted).
    """
    rows = []
    for name, report in named_reports:
        fractions = [ws.fraction_btree
                     for _, ws in sorted(report.widths.items())]
        monotone = all(a >= b - 1e-12 for a, b in zip(fractions, fractions[1:]))
        for bits, ws in sorted(report.widths.items()):
            rows.append({
                "workload": name,
                "policy": report.policy,
                "width_bits": bits,
                "pages_total": ws.pages_total,
                "pages_still_btree": ws.pages_still_btree,
                "fraction_btree": round(ws.fraction_btree, 6),
                "max_total_space_bytes": round(ws.max_total_space_bytes, 3),
                "space_ratio": round(ws.space_ratio, 6),
                "avg_max_runs_per_page": round(ws.avg_max_runs_per_page, 3),
                "max_runs_any_page": ws.max_runs_any_page,
                "depth_avg": round(ws.depth_avg, 4),
                "depth_max": ws.depth_max,
                "stg_ops": ws.stg_ops,
                "ldg_ops": ws.ldg_ops,
                "switch_events": ws.switch_events,
                "oracle_mismatches": ws.oracle_mismatches,
                "warnings": len(report.warnings),
                "fraction_monotone_nonincreasing": monotone,
            })
    return rows


def rows_to_csv(rows, fp):
    import csv
    writer = csv.DictWriter(fp, fieldnames=_ROW_FIELDS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
