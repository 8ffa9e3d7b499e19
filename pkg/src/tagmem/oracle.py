"""Brute-force reference tag storage.

A page's tags as a plain 256-entry array: the baseline every clever
representation must agree with.  Used by the test suite to validate
the run-length store and by the simulator's verification mode.
"""

from .pagestore import GRANULES_PER_PAGE


class FlatTagArray:
    """One full-width tag per granule, direct indexed access."""

    __slots__ = ("tags", "tag_mask")

    def __init__(self, bits=4):
        self.tag_mask = (1 << bits) - 1
        self.tags = [0] * GRANULES_PER_PAGE

    def ldg(self, granule):
        if not 0 <= granule < GRANULES_PER_PAGE:
            raise ValueError(f"granule out of range: {granule}")
        return self.tags[granule]

    def stg(self, granule, tag):
        if not 0 <= granule < GRANULES_PER_PAGE:
            raise ValueError(f"granule out of range: {granule}")
        if not 0 <= tag <= self.tag_mask:
            raise ValueError(f"tag out of range: {tag}")
        self.tags[granule] = tag

    def stg_range(self, first, count, tag):
        if count == 0:
            return
        if count < 0 or first < 0 or first + count > GRANULES_PER_PAGE:
            raise ValueError(f"granule range out of bounds: [{first}, {first + count})")
        if not 0 <= tag <= self.tag_mask:
            raise ValueError(f"tag out of range: {tag}")
        self.tags[first:first + count] = [tag] * count

    def reset(self):
        self.tags = [0] * GRANULES_PER_PAGE

    def truncate(self):
        """Mirror a page's switch to the 4-bit array: keep low nibbles only."""
        self.tags = [t & 0xF for t in self.tags]


def runs_of(tags):
    """Maximal (start, tag) runs of a granule-tag sequence, by linear scan."""
    runs = []
    prev = None
    for g, t in enumerate(tags):
        if t != prev:
            runs.append((g, t))
            prev = t
    return runs


def assert_equivalent(store, oracle):
    """Check every granule of a PageTagStore against the oracle array.

    After the store has switched to its 4-bit array, only the low nibble
    of each oracle tag is expected to survive (truncating at the switch
    and truncating at compare time agree, since masking is idempotent).
    """
    if store.mode == "array":
        expect = [t & 0xF for t in oracle.tags]
    else:
        expect = oracle.tags
    got = [store.ldg(g) for g in range(GRANULES_PER_PAGE)]
    if got != expect:
        bad = next(g for g in range(GRANULES_PER_PAGE) if got[g] != expect[g])
        raise AssertionError(
            f"ldg mismatch at granule {bad}: store={got[bad]} oracle={expect[bad]} "
            f"(mode={store.mode})")


def assert_runs_equivalent(store, oracle):
    """Cheaper whole-page check via run lists instead of 256 lookups."""
    if store.mode == "array":
        expect = runs_of([t & 0xF for t in oracle.tags])
    else:
        expect = runs_of(oracle.tags)
    got = store.enumerate_runs()
    if got != expect:
        raise AssertionError(
            f"run list mismatch (mode={store.mode}): store={got[:8]}... "
            f"oracle={expect[:8]}...")
