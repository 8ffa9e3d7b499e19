"""MAC+tag pointer scheme: determinism, binding, fallback, forgery rates."""

import random

import pytest

from tagmem.pagestore import PageTagStore
from tagmem.pacmte import PacHeap, PacKey, compute_tp, verify_access

KEY = PacKey.from_hex("000102030405060708090a0b0c0d0e0f")
PAGE = 0x7F0000


def _heap(seed=1):
    store = PageTagStore(16)
    return PacHeap(KEY, store, random.Random(seed), page_base=PAGE)


def test_mac_is_deterministic_and_16_bit():
    a = compute_tp(KEY, 0x1234, 0xDEADBEE0)
    b = compute_tp(KEY, 0x1234, 0xDEADBEE0)
    assert a == b
    assert 0 <= a <= 0xFFFF


def test_mac_depends_on_all_inputs():
    base = compute_tp(KEY, 0x1234, 0xDEADBEE0)
    assert compute_tp(KEY, 0x1235, 0xDEADBEE0) != base or \
        compute_tp(KEY, 0x1236, 0xDEADBEE0) != base
    assert compute_tp(KEY, 0x1234, 0xDEADBEF0) != base or \
        compute_tp(KEY, 0x1234, 0xDEADBED0) != base
    other = PacKey.from_hex("f0e0d0c0b0a090807060504030201000")
    assert compute_tp(other, 0x1234, 0xDEADBEE0) != base or \
        compute_tp(other, 0x1235, 0xDEADBEE0) != compute_tp(KEY, 0x1235, 0xDEADBEE0)


def test_mac_avalanche_rate():
    # flipping one input bit changes the output almost always (PRF-like)
    rng = random.Random(7)
    same = 0
    cases = 4000
    for _ in range(cases):
        t_m = rng.getrandbits(16)
        addr = rng.getrandbits(40) & ~0xF
        bit = rng.randrange(16)
        before = compute_tp(KEY, t_m, addr)
        after = compute_tp(KEY, t_m ^ (1 << bit), addr)
        same += before == after
    assert same / cases < 5 * (1 / 65536) + 0.003


def test_mac_context_separates():
    plain = compute_tp(KEY, 1, PAGE)
    typed = compute_tp(KEY, 1, PAGE, context=b"type:42")
    assert plain != typed or compute_tp(KEY, 2, PAGE) != \
        compute_tp(KEY, 2, PAGE, context=b"type:42")


def test_round_trip_every_interior_granule():
    heap = _heap()
    addr, tp = heap.alloc(PAGE + 64, 160)   # 10 granules
    for g in range(10):
        assert heap.verify(addr + g * 16, tp)
    assert not heap.verify(addr, tp ^ 1)


def test_dangling_pointer_fails_after_free():
    heap = _heap(2)
    addr, tp = heap.alloc(PAGE + 128, 96)
    assert heap.verify(addr, tp)
    heap.free(addr)
    # same run start, different memory tag: the MAC no longer matches
    # (except with 2^-16 collision luck, excluded for this seed)
    assert not heap.verify(addr, tp)
    with pytest.raises(ValueError):
        heap.free(addr)


def test_address_binding():
    heap = _heap(3)
    a, tp_a = heap.alloc(PAGE + 0x100, 64)
    b, tp_b = heap.alloc(PAGE + 0x200, 64)
    assert heap.verify(a, tp_a) and heap.verify(b, tp_b)
    assert not heap.verify(b, tp_a)
    assert not heap.verify(a, tp_b)


def test_forgery_rate_small_sample():
    heap = _heap(4)
    addr, _ = heap.alloc(PAGE + 0x300, 320)
    rng = random.Random(99)
    hits = sum(heap.verify(addr, rng.getrandbits(16)) for _ in range(20000))
    # expected ~0.3 acceptances at 2^-16
    assert hits <= 5


def test_fallback_keeps_live_pointers_valid():
    heap = _heap(5)
    issued = []
    addr = PAGE
    # single-granule allocations with gaps force many runs; 16-bit pages
    # fall back after at most 24 runs
    while heap.store.mode == "btree":
        a, tp = heap.alloc(addr, 16)
        issued.append((a, tp))
        addr += 48
    assert heap.store.mode == "array"
    for a, tp in issued:
        assert heap.verify(a, tp), f"pointer for {a:#x} broke at fallback"


def test_post_switch_verification_uses_low_nibble_only():
    heap = _heap(6)
    heap.store.switch_to_array()
    addr, tp = heap.alloc(PAGE + 0x400, 64)
    assert heap.verify(addr, tp)
    # any forgery sharing the low nibble passes; others fail
    assert heap.verify(addr, (tp & 0xF) | 0xABC0)
    assert not heap.verify(addr, tp ^ 0x1)


def test_post_switch_forgery_rate_small_sample():
    heap = _heap(7)
    heap.store.switch_to_array()
    addr, _ = heap.alloc(PAGE + 0x500, 64)
    rng = random.Random(5)
    n = 8000
    hits = sum(heap.verify(addr, rng.getrandbits(16)) for _ in range(n))
    p = hits / n
    sigma = (1 / 16 * 15 / 16 / n) ** 0.5
    assert abs(p - 1 / 16) < 4 * sigma


def test_verify_access_module_function():
    store = PageTagStore(16)
    rng = random.Random(8)
    heap = PacHeap(KEY, store, rng, page_base=PAGE)
    addr, tp = heap.alloc(PAGE + 0x600, 48)
    assert verify_access(KEY, addr + 32, tp, store)
    assert not verify_access(KEY, addr + 48, tp, store)  # outside the run


def test_key_validation():
    with pytest.raises(ValueError):
        PacKey(b"short")
    k = PacKey.generate(random.Random(1))
    assert len(k.value) == 16
    assert PacKey.from_hex(k.hex()).value == k.value


def test_heap_rejects_wrong_width_and_misalignment():
    with pytest.raises(ValueError):
        PacHeap(KEY, PageTagStore(4), random.Random(1))
    heap = _heap()
    with pytest.raises(ValueError):
        heap.alloc(PAGE + 5, 16)
