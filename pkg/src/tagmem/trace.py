"""Heap trace ingestion and synthesis.

Reads heap-profiler text logs (the ``--trace-malloc=yes`` line format),
generates deterministic synthetic workloads shaped like the measured
programs, and round-trips everything through a canonical line format:

    <seq> malloc <size> <new_addr>
    <seq> calloc <size> <new_addr>
    <seq> realloc <size> <old_addr> <new_addr>
    <seq> free <old_addr>

Addresses are hex with an 0x prefix; calloc sizes are already the
element-count product.  Replay semantics: calloc behaves as malloc, and
realloc frees the old address then allocates at the new one.
"""

import math
import random
import re
from dataclasses import dataclass

MALLOC = "malloc"
CALLOC = "calloc"
REALLOC = "realloc"
FREE = "free"

_RE_MALLOC = re.compile(
    r"--\d+--\s+malloc\(\s*(\d+)\s*\)\s*=\s*(0[xX][0-9a-fA-F]+)")
_RE_CALLOC = re.compile(
    r"--\d+--\s+calloc\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*=\s*(0[xX][0-9a-fA-F]+)")
_RE_REALLOC = re.compile(
    r"--\d+--\s+realloc\(\s*(0[xX][0-9a-fA-F]+)\s*,\s*(\d+)\s*\)"
    r"\s*=\s*(0[xX][0-9a-fA-F]+)")
_RE_FREE = re.compile(r"--\d+--\s+free\(\s*(0[xX][0-9a-fA-F]+)\s*\)")


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    size: int = 0
    old_addr: int = 0
    new_addr: int = 0


@dataclass
class ParseStats:
    recognized: int = 0
    skipped: int = 0
    null_frees: int = 0


def parse_valgrind(lines):
    """Parse trace-malloc text into events; unknown lines count as skips."""
    events = []
    stats = ParseStats()
    seq = 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        m = _RE_MALLOC.search(line)
        if m:
            events.append(TraceEvent(seq, MALLOC, int(m.group(1)),
                                     new_addr=int(m.group(2), 16)))
            seq += 1
            stats.recognized += 1
            continue
        m = _RE_CALLOC.search(line)
        if m:
            size = int(m.group(1)) * int(m.group(2))
            events.append(TraceEvent(seq, CALLOC, size,
                                     new_addr=int(m.group(3), 16)))
            seq += 1
            stats.recognized += 1
            continue
        m = _RE_REALLOC.search(line)
        if m:
            events.append(TraceEvent(seq, REALLOC, int(m.group(2)),
                                     old_addr=int(m.group(1), 16),
                                     new_addr=int(m.group(3), 16)))
            seq += 1
            stats.recognized += 1
            continue
        m = _RE_FREE.search(line)
        if m:
            addr = int(m.group(1), 16)
            if addr == 0:
                stats.null_frees += 1
                continue
            events.append(TraceEvent(seq, FREE, old_addr=addr))
            seq += 1
            stats.recognized += 1
            continue
        stats.skipped += 1
    return events, stats


def normalize(events, strict=False):
    """Enforce the liveness discipline.

    Frees or reallocs of addresses that are not live are dropped with a
    warning (recorded traces can be incomplete); overlapping allocations
    are kept but warned about.  Returns (events, warnings).
    """
    live = {}
    out = []
    warnings = []
    seq = 0
    for ev in events:
        if ev.kind in (MALLOC, CALLOC):
            if ev.new_addr in live:
                warnings.append(
                    f"event {ev.seq}: allocation at live address "
                    f"{ev.new_addr:#x}")
            live[ev.new_addr] = ev.size
            out.append(TraceEvent(seq, ev.kind, ev.size,
                                  new_addr=ev.new_addr))
            seq += 1
        elif ev.kind == REALLOC:
            if ev.old_addr and ev.old_addr not in live:
                warnings.append(
                    f"event {ev.seq}: realloc of unknown address "
                    f"{ev.old_addr:#x}")
                if strict:
                    raise ValueError(warnings[-1])
                live[ev.new_addr] = ev.size
                out.append(TraceEvent(seq, MALLOC, ev.size,
                                      new_addr=ev.new_addr))
                seq += 1
                continue
            live.pop(ev.old_addr, None)
            live[ev.new_addr] = ev.size
            out.append(TraceEvent(seq, REALLOC, ev.size,
                                  old_addr=ev.old_addr,
                                  new_addr=ev.new_addr))
            seq += 1
        elif ev.kind == FREE:
            if ev.old_addr not in live:
                warnings.append(
                    f"event {ev.seq}: free of unknown address "
                    f"{ev.old_addr:#x}")
                if strict:
                    raise ValueError(warnings[-1])
                continue
            del live[ev.old_addr]
            out.append(TraceEvent(seq, FREE, old_addr=ev.old_addr))
            seq += 1
        else:
            raise ValueError(f"bad event kind: {ev.kind!r}")
    return out, warnings


# -- canonical text format ----------------------------------------------------


def write_canonical(events, fp):
    for ev in events:
        if ev.kind in (MALLOC, CALLOC):
            fp.write(f"{ev.seq} {ev.kind} {ev.size} {ev.new_addr:#x}\n")
        elif ev.kind == REALLOC:
            fp.write(f"{ev.seq} realloc {ev.size} {ev.old_addr:#x} "
                     f"{ev.new_addr:#x}\n")
        elif ev.kind == FREE:
            fp.write(f"{ev.seq} free {ev.old_addr:#x}\n")
        else:
            raise ValueError(f"bad event kind: {ev.kind!r}")


def read_canonical(fp):
    events = []
    for lineno, line in enumerate(fp, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            seq = int(parts[0])
            kind = parts[1]
            if len(parts) != {MALLOC: 4, CALLOC: 4, REALLOC: 5, FREE: 3}.get(kind):
                raise ValueError(f"wrong field count for {kind!r}")
            if kind in (MALLOC, CALLOC):
                events.append(TraceEvent(seq, kind, int(parts[2]),
                                         new_addr=int(parts[3], 16)))
            elif kind == REALLOC:
                events.append(TraceEvent(seq, kind, int(parts[2]),
                                         old_addr=int(parts[3], 16),
                                         new_addr=int(parts[4], 16)))
            else:
                events.append(TraceEvent(seq, kind, old_addr=int(parts[2], 16)))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"trace parse error at line {lineno}: {exc}") from None
    return events


# -- synthetic workloads -------------------------------------------------------


@dataclass
class WorkloadSpec:
    """Synthetic heap workload description.

    ``dist`` is a tagged tuple: ("point", size), ("uniform", lo, hi),
    ("lognormal", mu, sigma), or ("cdf", [(cum_p, size), ...]).
    """

    events: int
    dist: tuple
    alloc_free_ratio: float = 1.5
    live_target: int = 64
    seed: int = 0
    base_addr: int = 0x10000000
    metadata_gap: bool = True

    def __post_init__(self):
        if self.events < 1:
            raise ValueError("event count must be >= 1")


def lognormal_mu(mean, sigma):
    """mu such that a lognormal(mu, sigma) has the given mean."""
    return math.log(mean) - sigma * sigma / 2.0


def _draw_size(dist, rng):
    kind = dist[0]
    if kind == "point":
        return dist[1]
    if kind == "uniform":
        return rng.randint(dist[1], dist[2])
    if kind == "lognormal":
        return max(1, int(rng.lognormvariate(dist[1], dist[2])))
    if kind == "cdf":
        u = rng.random()
        for cum_p, size in dist[1]:
            if u <= cum_p:
                return size
        return dist[1][-1][1]
    raise ValueError(f"unknown size distribution: {kind!r}")


def gen_workload(spec):
    """Deterministic synthetic event stream from a bump allocator.

    Allocations are 16-byte aligned; with ``metadata_gap`` one granule is
    left in front of every allocation for allocator bookkeeping, the way
    chunk headers sit in front of heap objects.
    """
    rng = random.Random(spec.seed)
    cursor = spec.base_addr
    live = []          # (addr,) kept in insertion order; frees pick randomly
    events = []
    p_alloc = spec.alloc_free_ratio / (1.0 + spec.alloc_free_ratio)
    for seq in range(spec.events):
        do_alloc = (not live or
                    (len(live) < 2 * spec.live_target and rng.random() < p_alloc))
        if do_alloc:
            size = _draw_size(spec.dist, rng)
            if spec.metadata_gap:
                cursor += 16
            addr = cursor
            cursor += ((size + 15) // 16) * 16
            live.append(addr)
            events.append(TraceEvent(seq, MALLOC, size, new_addr=addr))
        else:
            victim = live.pop(rng.randrange(len(live)))
            events.append(TraceEvent(seq, FREE, old_addr=victim))
    return events


def gen_figure2():
    """Three 48-byte allocations, each with a metadata granule in front,
    packed so the block ends exactly at a page boundary."""
    base = 0x10000000 + 0xF40   # 0xF40 = 4096 - 3*(16+48)
    events = []
    addr = base
    for seq in range(3):
        addr += 16
        events.append(TraceEvent(seq, MALLOC, 48, new_addr=addr))
        addr += 48
    return events


PRESETS = {
    # synthetic approximations of the measured workload statistics
    # (allocation-count scale reduced; labeled approximations, not replays)
    "fig2": None,  # special-cased layout above
    "apache2-like": WorkloadSpec(
        events=1600, dist=("lognormal", lognormal_mu(1035, 1.0), 1.0),
        alloc_free_ratio=1.4, live_target=160, seed=0xA9A),
    "axel-like": WorkloadSpec(
        events=240, dist=("lognormal", lognormal_mu(144746, 1.2), 1.2),
        alloc_free_ratio=1.6, live_target=40, seed=0xA8E1),
    "ffmpeg-like": WorkloadSpec(
        events=1200, dist=("lognormal", lognormal_mu(5597, 1.1), 1.1),
        alloc_free_ratio=1.3, live_target=120, seed=0xFF3),
    "md5sum-like": WorkloadSpec(
        events=2000, dist=("lognormal", lognormal_mu(265, 1.2), 1.2),
        alloc_free_ratio=1.2, live_target=200, seed=0x3D5),
    "pbzip2-like": WorkloadSpec(
        events=80, dist=("lognormal", lognormal_mu(818860, 0.7), 0.7),
        alloc_free_ratio=1.7, live_target=12, seed=0xB21),
}


def preset_events(name):
    if name == "fig2":
        return gen_figure2()
    spec = PRESETS.get(name)
    if spec is None:
        raise ValueError(f"unknown workload preset: {name!r}")
    return gen_workload(spec)
