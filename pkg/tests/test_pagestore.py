"""Unit and fuzz tests for the per-page run-length tag store."""

import random
from fractions import Fraction

import pytest

from tagmem.pagestore import (GRANULES_PER_PAGE, METADATA_SPACE,
                              PAGE_BUFFER_BYTES, PageTagStore, TagRegion,
                              tag_width)
from tagmem.oracle import FlatTagArray, assert_equivalent, runs_of

ALL_BITS = [4, 8, 16, 32]


def test_width_constants():
    expect = {4: (13, 9, 36), 8: (15, 8, 32), 16: (19, 6, 24), 32: (27, 4, 16)}
    for bits, (node_size, max_nodes, max_runs) in expect.items():
        w = tag_width(bits)
        assert w.node_size == node_size
        assert w.max_nodes == max_nodes
        assert w.max_runs == max_runs
        # last slot must end inside the buffer
        assert 3 + w.max_nodes * w.node_size <= PAGE_BUFFER_BYTES


def test_unsupported_width():
    with pytest.raises(ValueError):
        tag_width(12)


@pytest.mark.parametrize("bits", ALL_BITS)
def test_fresh_page(bits):
    st = PageTagStore(bits)
    assert st.mode == "btree"
    assert st.run_count == 1
    assert st.node_count == 1
    assert st.depth() == 1
    assert all(st.ldg(g) == 0 for g in range(0, 256, 7))
    assert st.ldg(200) == 0
    st.check_invariants()


def test_fresh_space_is_16_125_at_4bit():
    st = PageTagStore(4)
    assert st.space_used() == Fraction(129, 8)  # 16.125 bytes
    assert float(st.space_used()) == 16.125
    # 7.9x smaller than the 128-byte flat array
    assert 7.9 < PAGE_BUFFER_BYTES / st.space_used() < 8.0


@pytest.mark.parametrize("bits", ALL_BITS)
def test_single_node_space_by_width(bits):
    st = PageTagStore(bits)
    assert st.space_used() == tag_width(bits).node_size + METADATA_SPACE


def test_256_runs_never_fit():
    # even at the node-count lower bound, 256 runs need over 835 bytes
    lower = Fraction(256, 4) * 13 + METADATA_SPACE
    assert lower >= 835
    assert lower > PAGE_BUFFER_BYTES


def test_stg_basic_split_and_boundary():
    st = PageTagStore(4)
    st.stg_range(3, 3, 9)  # granules [3, 6)
    assert st.ldg(4) == 9
    assert st.ldg(6) == 0
    assert st.enumerate_runs() == [(0, 0), (3, 9), (6, 0)]
    st.check_invariants()


def test_two_runs_still_one_node():
    # a page split into two runs fits one node: still 16.125 bytes
    st = PageTagStore(4)
    st.stg_range(128, 128, 7)
    assert st.run_count == 2
    assert st.node_count == 1
    assert st.space_used() == Fraction(129, 8)


def test_stg_idempotent_write():
    st = PageTagStore(4)
    st.stg_range(0, 256, 7)
    assert st.enumerate_runs() == [(0, 7)]
    st.stg(5, 7)  # same tag: no structural change
    assert st.run_count == 1
    assert st.enumerate_runs() == [(0, 7)]
    st.check_invariants()


def test_full_page_merge_one_granule_at_a_time():
    st = PageTagStore(4)
    for g in range(256):
        st.stg(g, 5)
    assert st.run_count == 1
    assert st.enumerate_runs() == [(0, 5)]
    st.check_invariants()


def test_interior_write_splits_into_three_runs():
    st = PageTagStore(4)
    st.stg(100, 3)
    assert st.enumerate_runs() == [(0, 0), (100, 3), (101, 0)]


def test_range_write_then_undo_restores_fresh_page():
    st = PageTagStore(8)
    fresh = st.image()
    st.stg_range(16, 3, 0xAB)
    assert st.run_count == 3
    st.stg_range(16, 3, 0)
    assert st.run_count == 1
    assert st.image() == fresh
    st.check_invariants()


def test_figure2_layout_has_six_runs():
    # three 48-byte allocations at the end of the page, each preceded by a
    # zero-tagged metadata granule; the leading metadata granule merges with
    # the page's ambient zero run
    st = PageTagStore(4)
    for i, tag in enumerate((5, 9, 12)):
        start = 245 + 4 * i
        st.stg_range(start, 3, tag)
    assert st.run_count == 6
    assert st.enumerate_runs() == [
        (0, 0), (245, 5), (248, 0), (249, 9), (252, 0), (253, 12)]
    assert st.mode == "btree"
    st.check_invariants()


def test_empty_range_is_noop():
    st = PageTagStore(4)
    img = st.image()
    st.stg_range(17, 0, 9)
    assert st.image() == img


def test_domain_errors():
    st = PageTagStore(4)
    with pytest.raises(ValueError):
        st.ldg(256)
    with pytest.raises(ValueError):
        st.ldg(-1)
    with pytest.raises(ValueError):
        st.stg(0, 16)  # tag too wide for 4-bit
    with pytest.raises(ValueError):
        st.stg_range(250, 10, 1)  # runs past page end
    st8 = PageTagStore(8)
    st8.stg(0, 255)
    with pytest.raises(ValueError):
        st8.stg(0, 256)


def test_switch_truncates_to_low_nibble():
    st = PageTagStore(16)
    st.stg_range(7, 2, 0x00A5)
    st.switch_to_array()
    assert st.mode == "array"
    assert st.ldg(7) == 0x5
    assert st.ldg(0) == 0
    assert st.space_used() == PAGE_BUFFER_BYTES
    assert st.depth() is None
    # switching again is a documented no-op
    img = st.image()
    st.switch_to_array()
    assert st.image() == img and st.switch_count == 1


def test_reset_restores_btree_mode_and_width():
    st = PageTagStore(16)
    st.stg_range(0, 256, 0xBEEF)
    st.switch_to_array()
    st.page_reset()
    assert st.mode == "btree"
    assert st.width_bits == 16
    assert st.run_count == 1
    assert st.ldg(123) == 0
    assert st.image() == tag_width(16).init_image
    st.check_invariants()


def test_array_mode_writes_truncate():
    st = PageTagStore(32)
    st.switch_to_array()
    st.stg_range(10, 4, 0xDEADBEEF)
    assert st.ldg(11) == 0xF
    st.stg(10, 0x10)  # low nibble 0
    assert st.ldg(10) == 0


def test_run_containing():
    st = PageTagStore(4)
    st.stg_range(32, 16, 6)
    assert st.run_containing(40) == (32, 6)
    assert st.run_containing(31) == (0, 0)
    assert st.run_containing(48) == (48, 0)
    st.switch_to_array()
    with pytest.raises(RuntimeError):
        st.run_containing(40)


@pytest.mark.parametrize("bits", ALL_BITS)
def test_switch_threshold_constructive(bits):
    """Insert disjoint single-granule runs until the page switches.

    The page must never switch while the mutation fits the node budget,
    must hold the node/run-count bounds at every step, and must have
    switched by the loose run-count threshold at the latest.
    """
    w = tag_width(bits)
    st = PageTagStore(bits)
    rng = random.Random(1234 + bits)
    granules = list(range(0, 256, 2))
    rng.shuffle(granules)
    max_seen_runs = 0
    for g in granules:
        before_runs = st.run_count
        before_space = st.space_used()
        assert before_space <= PAGE_BUFFER_BYTES
        st.stg(g, 1 + (g % min(w.tag_mask, 9)))
        if st.mode == "array":
            # the failed mutation was attempted on the pre-switch tree
            assert before_runs <= w.max_runs
            assert before_space <= PAGE_BUFFER_BYTES
            break
        max_seen_runs = max(max_seen_runs, st.run_count)
        assert st.run_count <= 4 * st.node_count
        assert 2 * st.node_count <= st.run_count + 1
        assert st.space_used() == st.node_count * w.node_size + METADATA_SPACE
        assert st.depth() <= (3 if bits == 4 else 2)
    else:
        pytest.fail("page never switched")
    assert max_seen_runs <= w.max_runs


def test_switch_preserves_pre_switch_tags_truncated():
    st = PageTagStore(32)
    oracle = FlatTagArray(32)
    rng = random.Random(7)
    while st.mode == "btree":
        g = rng.randrange(256)
        t = rng.randrange(1, 1 << 20)
        st.stg(g, t)
        oracle.stg(g, t)
    assert [st.ldg(g) for g in range(256)] == [t & 0xF for t in oracle.tags]


@pytest.mark.parametrize("bits", ALL_BITS)
def test_fuzz_against_oracle(bits):
    """Randomized mixed op sequences replayed on store and oracle."""
    rng = random.Random(9000 + bits)
    st = PageTagStore(bits)
    oracle = FlatTagArray(bits)
    mask = tag_width(bits).tag_mask
    for seq in range(30):
        st.page_reset()
        oracle.reset()
        for opi in range(400):
            r = rng.random()
            if r < 0.45:
                g = rng.randrange(256)
                t = rng.randrange(8) if rng.random() < 0.7 else rng.randrange(mask + 1)
                st.stg(g, t)
                oracle.stg(g, t)
            elif r < 0.95:
                first = rng.randrange(256)
                count = min(256 - first, 1 + int(rng.expovariate(1 / 12.0)))
                t = rng.randrange(8) if rng.random() < 0.7 else rng.randrange(mask + 1)
                st.stg_range(first, count, t)
                oracle.stg_range(first, count, t)
            else:
                st.page_reset()
                oracle.reset()
            if opi % 50 == 49:
                assert_equivalent(st, oracle)
                if st.mode == "btree":
                    st.check_invariants()
        assert_equivalent(st, oracle)
        if st.mode == "btree":
            st.check_invariants()


def test_region_buffer_confinement():
    region = TagRegion(4, 8)
    rng = random.Random(42)
    baseline = [region.page_image(i) for i in range(8)]
    st = region.page(3)
    for _ in range(500):
        st.stg(rng.randrange(256), rng.randrange(16))
    for i in range(8):
        if i == 3:
            continue
        assert region.page_image(i) == baseline[i], f"page {i} buffer disturbed"
    assert region.page_image(3) == st.image()


def test_region_mode_flags_and_total_space():
    region = TagRegion(32, 4)
    st0 = region.page(0)
    st1 = region.page(1)
    assert region.total_space() == 2 * (27 + METADATA_SPACE)
    for g in range(0, 256, 2):
        st1.stg(g, (g % 7) + 1)
        if st1.mode == "array":
            break
    assert region.mode_flag(1) and not region.mode_flag(0)
    st1.page_reset()
    assert not region.mode_flag(1)
    assert st0.mode == "btree"


def test_runs_of_canonical_and_idempotent():
    tags = [0] * 256
    tags[245:248] = [5, 5, 5]
    tags[249:252] = [9, 9, 9]
    tags[253:256] = [12, 12, 12]
    runs = runs_of(tags)
    assert runs == [(0, 0), (245, 5), (248, 0), (249, 9), (252, 0), (253, 12)]
    # idempotent: expanding and re-scanning yields the same list
    expanded = []
    for i, (s, t) in enumerate(runs):
        e = runs[i + 1][0] if i + 1 < len(runs) else 256
        expanded += [t] * (e - s)
    assert runs_of(expanded) == runs
    assert runs[0][0] == 0
    assert all(a[1] != b[1] for a, b in zip(runs, runs[1:]))


def test_oracle_direct_ops():
    arr = FlatTagArray(4)
    assert arr.ldg(99) == 0
    arr.stg(10, 5)
    assert arr.ldg(10) == 5
    with pytest.raises(ValueError):
        arr.stg(256, 1)
    with pytest.raises(ValueError):
        arr.ldg(-1)
