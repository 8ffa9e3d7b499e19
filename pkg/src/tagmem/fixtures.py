"""Golden regression fixtures.

Five canonical 128-byte page images, MAC test vectors, pinned attack
outcomes, and a trace conversion sample.  The generating scripts live
here; the expected bytes are committed under ``golden/`` and re-checked
bit-exactly by the ``verify`` command (``--regen`` rewrites them).
"""

import json
import random
from pathlib import Path

from .attacks import AttackScenario, run_attack
from .pacmte import PacKey, compute_tp
from .pagestore import PageTagStore
from .trace import parse_valgrind, read_canonical, write_canonical

# (width bits, op script) per canonical page state; ops are replayed in order
PAGE_FIXTURES = {
    "fresh-4bit": (4, []),
    "fig2-4bit": (4, [
        ("stg_range", 245, 3, 5),
        ("stg_range", 249, 3, 9),
        ("stg_range", 253, 3, 12),
    ]),
    "wide-16bit": (16, [
        ("stg_range", 0, 256, 0x1234),
        ("stg_range", 16, 8, 0xBEEF),
        ("stg", 7, 0x00A5),
        ("stg_range", 200, 40, 0x0042),
        ("stg", 7, 0x1234),          # merge the split back together
    ]),
    "switched-32bit": (32, [
        # disjoint single-granule runs overflow the four 27-byte node slots
        ("stg", g, (g // 2) % 9 + 1) for g in range(0, 34, 2)
    ]),
    "deep-4bit": (4, [
        ("stg_range", 0 + 30 * i, 12, i + 3) for i in range(7)
    ] + [
        ("stg_range", 30, 12, 0),    # delete a run, merging zero neighbors
        ("stg", 65, 2),              # split inside a run
        ("stg_range", 150, 30, 7),   # overwrite across run boundaries
    ]),
}

PAC_VECTOR_KEY = "000102030405060708090a0b0c0d0e0f"

ATTACK_FIXTURES = [
    # (scenario, policy); replayed at this pinned scale and seed
    ("metadata-overwrite", "glibc"),
    ("uaf-realloc", "glibc"),
    ("uaf-increment", "chrome-odd-delta"),
    ("adjacent-overflow", "scudo-odd-even"),
    ("double-free", "slub"),
]
ATTACK_FIXTURE_TRIALS = 2000
ATTACK_FIXTURE_SEED = 7

SAMPLE_VALGRIND = """\
--4523-- malloc(1035) = 0x4A2F028
--4523-- calloc(2,512) = 0x4A2F440
--4523-- realloc(0x4A2F028,2070) = 0x4A2F650
==4523== some unrelated diagnostic line
--4523-- free(0x0)
--4523-- free(0x4A2F440)
--4523-- malloc(48) = 0x4A30010
--4523-- free(0x4A2F650)
"""


def build_page_image(name):
    bits, ops = PAGE_FIXTURES[name]
    store = PageTagStore(bits)
    for op in ops:
        getattr(store, op[0])(*op[1:])
    return store.image()


def build_pac_vectors():
    key = PacKey.from_hex(PAC_VECTOR_KEY)
    cases = []
    rng = random.Random(2718)
    grid = [(0x0000, 0x10000000, b""), (0xFFFF, 0x10000000, b""),
            (0x1234, 0x7F0000F0, b""), (0x1234, 0x7F0000F0, b"type:42")]
    grid += [(rng.getrandbits(16), rng.getrandbits(40) & ~0xF, b"")
             for _ in range(8)]
    for t_m, addr, ctx in grid:
        cases.append({
            "mem_tag": t_m,
            "addr": addr,
            "context": ctx.decode("ascii"),
            "pointer_tag": compute_tp(key, t_m, addr, ctx),
        })
    return {"key": PAC_VECTOR_KEY, "cases": cases}


def build_attack_expectations():
    rows = []
    for kind, policy in ATTACK_FIXTURES:
        out = run_attack(AttackScenario(kind, policy, ATTACK_FIXTURE_TRIALS),
                         ATTACK_FIXTURE_SEED)
        rows.append({"scenario": kind, "policy": policy,
                     "trials": out.trials, "successes": out.successes})
    return {"seed": ATTACK_FIXTURE_SEED, "rows": rows}


def build_trace_expectation():
    import io
    events, _ = parse_valgrind(io.StringIO(SAMPLE_VALGRIND))
    buf = io.StringIO()
    write_canonical(events, buf)
    return buf.getvalue()


def regenerate(golden_dir):
    """Write every fixture under the golden directory."""
    root = Path(golden_dir)
    pages = root / "pages"
    pages.mkdir(parents=True, exist_ok=True)
    for name in PAGE_FIXTURES:
        (pages / f"{name}.bin").write_bytes(build_page_image(name))
    (root / "pac").mkdir(exist_ok=True)
    (root / "pac" / "vectors.json").write_text(
        json.dumps(build_pac_vectors(), indent=2, sort_keys=True) + "\n")
    (root / "attacks").mkdir(exist_ok=True)
    (root / "attacks" / "expected.json").write_text(
        json.dumps(build_attack_expectations(), indent=2, sort_keys=True) + "\n")
    traces = root / "traces"
    traces.mkdir(exist_ok=True)
    (traces / "sample_valgrind.txt").write_text(SAMPLE_VALGRIND)
    (traces / "expected_canonical.txt").write_text(build_trace_expectation())


def verify(golden_dir):
    """Replay every fixture and diff against the committed bytes.

    Returns a list of failure descriptions (empty when clean).
    """
    root = Path(golden_dir)
    failures = []

    for name in PAGE_FIXTURES:
        path = root / "pages" / f"{name}.bin"
        if not path.exists():
            failures.append(f"pages/{name}.bin: missing")
            continue
        expected = path.read_bytes()
        actual = build_page_image(name)
        if actual != expected:
            bad = next((i for i in range(min(len(actual), len(expected)))
                        if actual[i] != expected[i]), len(expected))
            failures.append(
                f"pages/{name}.bin: image differs at byte {bad}")

    path = root / "pac" / "vectors.json"
    if not path.exists():
        failures.append("pac/vectors.json: missing")
    else:
        committed = json.loads(path.read_text())
        key = PacKey.from_hex(committed["key"])
        for i, case in enumerate(committed["cases"]):
            got = compute_tp(key, case["mem_tag"], case["addr"],
                             case["context"].encode("ascii"))
            if got != case["pointer_tag"]:
                failures.append(
                    f"pac/vectors.json: case {i} expected "
                    f"{case['pointer_tag']:#06x} got {got:#06x}")

    path = root / "attacks" / "expected.json"
    if not path.exists():
        failures.append("attacks/expected.json: missing")
    else:
        committed = json.loads(path.read_text())
        seed = committed["seed"]
        for row in committed["rows"]:
            out = run_attack(AttackScenario(row["scenario"], row["policy"],
                                            row["trials"]), seed)
            if out.successes != row["successes"]:
                failures.append(
                    f"attacks/expected.json: {row['scenario']}/{row['policy']} "
                    f"expected {row['successes']} successes got {out.successes}")

    sample = root / "traces" / "sample_valgrind.txt"
    expected_txt = root / "traces" / "expected_canonical.txt"
    if not sample.exists() or not expected_txt.exists():
        failures.append("traces fixtures: missing")
    else:
        import io
        events, _ = parse_valgrind(io.StringIO(sample.read_text()))
        buf = io.StringIO()
        write_canonical(events, buf)
        if buf.getvalue() != expected_txt.read_text():
            failures.append("traces/expected_canonical.txt: conversion differs")
        else:
            buf.seek(0)
            if read_canonical(buf) != events:
                failures.append("traces round trip: reparse differs")
    return failures
