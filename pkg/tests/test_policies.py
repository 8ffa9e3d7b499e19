"""Per-policy tagging behavior and the hardened-variant invariants."""

import random

import pytest

from tagmem.memmodel import TaggedMemory
from tagmem.policies import (ChromeDeltaTablePolicy, ChromePolicy,
                             ChromeRandomOddDeltaPolicy, GlibcImprovedPolicy,
                             GlibcPolicy, LinuxSlubPolicy, LlvmStackPolicy,
                             LlvmStackOddDeltaPolicy, ScudoPolicy,
                             granules_for, make_policy, on_free, on_malloc,
                             step_tag)

BASE = 0x10010


def test_granules_for():
    assert granules_for(0) == 1
    assert granules_for(1) == 1
    assert granules_for(16) == 1
    assert granules_for(17) == 2
    assert granules_for(48) == 3


def test_glibc_malloc_writes():
    pol = GlibcPolicy(random.Random(1))
    res = pol.malloc(BASE, 48)
    assert res.record.granules == 3
    assert 1 <= res.record.tag <= 15
    assert res.writes == [(BASE - 16, 1, 0), (BASE, 3, res.record.tag)]


def test_glibc_free_zeroes_and_checks_double_free():
    pol = GlibcPolicy(random.Random(2))
    rec = pol.malloc(BASE, 48).record
    original_tag = rec.pointer_tag
    res = pol.free(rec, original_tag)
    assert not res.rejected
    assert res.writes == [(BASE, 3, 0)]
    assert rec.tag == 0 and not rec.live
    # second free through the stale pointer: tag no longer matches
    res2 = pol.free(rec, original_tag)
    assert res2.rejected and res2.writes == []


def test_glibc_improved_metadata_differs_from_allocation():
    pol = GlibcImprovedPolicy(random.Random(3))
    for _ in range(300):
        res = pol.malloc(BASE, 32)
        meta_tag = res.writes[0][2]
        assert meta_tag != res.record.tag


def test_glibc_improved_free_tag_nonzero_and_differs():
    pol = GlibcImprovedPolicy(random.Random(4))
    for _ in range(300):
        rec = pol.malloc(BASE, 32).record
        old = rec.tag
        res = pol.free(rec)
        new = res.writes[0][2]
        assert new != 0 and new != old


def test_slub_size_class_slack():
    pol = LinuxSlubPolicy(random.Random(5))
    res = pol.malloc(BASE, 36)  # 64-byte class: 3 requested + 1 slack granule
    assert res.record.granules == 3
    assert res.record.slack_granules == 1
    assert res.writes[0] == (BASE, 3, res.record.tag)
    assert res.writes[1] == (BASE + 48, 1, 0xE)


def test_slub_never_tags_live_allocations_with_reserved_values():
    pol = LinuxSlubPolicy(random.Random(6))
    tags = {pol.malloc(BASE, 16).record.tag for _ in range(500)}
    assert 0xE not in tags and 0xF not in tags
    assert tags == set(range(14))


def test_slub_free_and_match_all_check():
    pol = LinuxSlubPolicy(random.Random(7))
    rec = pol.malloc(BASE, 36).record
    old = rec.pointer_tag
    res = pol.free(rec, old)
    assert not res.rejected and res.writes == [(BASE, 3, 0xE)]
    assert pol.free(rec, old).rejected          # stale tag
    assert not pol.free(rec, 0xF).rejected       # match-all pointer accepted
    assert not pol.free(rec, 0xE).rejected       # current memory tag accepted


def test_scudo_odd_even_parity_follows_chunk():
    pol = ScudoPolicy(random.Random(8), odd_even=True)
    size = 48
    for chunk in range(8):
        addr = 0x20000 + chunk * granules_for(size) * 16
        assert pol.chunk_index(addr, size) == chunk
        rec = pol.malloc(addr, size).record
        assert rec.tag % 2 == chunk % 2
        assert rec.tag != 0


def test_scudo_guard_and_header_granules():
    pol = ScudoPolicy(random.Random(9))
    res = pol.malloc(BASE, 48)
    assert (BASE - 16, 1, 0) in res.writes
    assert (BASE + 48, 1, 0) in res.writes


def test_scudo_free_parity_and_reuse():
    pol = ScudoPolicy(random.Random(10), odd_even=True)
    rec = pol.malloc(0x20000 + 48, 48).record   # chunk 1: odd parity
    res = pol.free(rec)
    free_tag = res.writes[0][2]
    assert free_tag % 2 == 1 and free_tag != 0
    # re-allocating the same start reuses the free-time tag without re-tagging
    res2 = pol.malloc(0x20000 + 48, 48)
    assert res2.record.tag == free_tag
    assert res2.writes == [(0x20000 + 48 + 48, 1, 0)]  # only the guard


def test_scudo_reuse_extends_and_shrinks():
    pol = ScudoPolicy(random.Random(11))
    rec = pol.malloc(0x30000, 640).record       # 40 granules
    pol.free(rec)
    tag = rec.tag
    res = pol.malloc(0x30000, 480)              # 30 granules, same start
    assert res.record.tag == tag
    # only the guard granule after the 30th is re-tagged; granules 31..40
    # keep the free-time tag (the use-after-free window)
    assert res.writes == [(0x30000 + 30 * 16, 1, 0)]
    pol2 = ScudoPolicy(random.Random(12))
    rec2 = pol2.malloc(0x40000, 320).record     # 20 granules
    pol2.free(rec2)
    res2 = pol2.malloc(0x40000, 480)            # grows to 30
    assert res2.writes[0] == (0x40000 + 20 * 16, 10, rec2.tag)


def test_chrome_increment_and_reuse():
    pol = ChromePolicy(random.Random(13))
    rec = pol.malloc(BASE, 64).record
    t = rec.tag
    res = pol.free(rec)
    assert res.writes == [(BASE, 4, (t + 1) & 0xF)]
    res2 = pol.malloc(BASE, 64)
    assert res2.record.tag == (t + 1) & 0xF
    assert res2.writes == []


def test_chrome_random_odd_delta():
    pol = ChromeRandomOddDeltaPolicy(random.Random(14))
    assert pol.delta % 2 == 1
    rec = pol.malloc(BASE, 16).record
    t = rec.tag
    pol.free(rec)
    assert rec.tag == (t + pol.delta) & 0xF


def test_chrome_delta_seven_example():
    # free of a tag-7 allocation with delta 5 lands on tag 12
    assert (7 + 5) & 0xF == 12
    pol = ChromePolicy(random.Random(15))
    rec = pol.malloc(BASE, 16).record
    rec.tag = 7
    res = pol.free(rec)
    assert res.writes[0][2] == 8


def test_chrome_delta_table_indexed_by_address():
    pol = ChromeDeltaTablePolicy(random.Random(16))
    assert len(pol.deltas) == 4 and all(d % 2 == 1 for d in pol.deltas)
    for i in range(8):
        addr = 0x50000 + i * 16
        assert pol._delta(addr) == pol.deltas[i % 4]


@pytest.mark.parametrize("delta", [1, 3, 5, 7, 9, 11, 13, 15])
def test_any_odd_delta_cycles_all_sixteen_tags(delta):
    seen = set()
    t = 0
    for _ in range(16):
        seen.add(t)
        t = (t + delta) & 0xF
    assert len(seen) == 16
    assert t == 0  # orbit length exactly 16


def test_step_tag_skips_zero():
    assert step_tag(15, 1) == 1
    assert step_tag(14, 1) == 15
    assert step_tag(1, 15) == 1   # wraps past 0
    assert step_tag(7, 1) == 8


def test_llvm_stack_sequential_tags():
    pol = LlvmStackPolicy(random.Random(17))
    base = pol.new_frame()
    assert base != 0
    tags = [pol.next_var_tag() for _ in range(6)]
    assert tags[0] == base
    for a, b in zip(tags, tags[1:]):
        assert b == step_tag(a, 1)
        assert b != 0


def test_llvm_odd_delta_per_frame():
    pol = LlvmStackOddDeltaPolicy(random.Random(18))
    deltas = set()
    for _ in range(40):
        pol.new_frame()
        deltas.add(pol.delta)
    assert deltas <= {1, 3, 5, 7, 9, 11, 13, 15}
    assert len(deltas) > 2


def test_policy_registry_and_memory_glue():
    rng = random.Random(19)
    mem = TaggedMemory(4)
    pol = make_policy("glibc", rng)
    rec = on_malloc(pol, BASE, 48, rng, mem)
    assert mem.ldg_addr(BASE) == rec.tag
    assert mem.ldg_addr(BASE - 16) == 0
    rejected = on_free(pol, rec, rng, mem, rec.pointer_tag)
    assert not rejected
    assert mem.ldg_addr(BASE) == 0
    with pytest.raises(ValueError):
        make_policy("nonsense", rng)
