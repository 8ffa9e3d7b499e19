"""Allocator tagging policies.

Each policy reproduces one surveyed system's malloc/free tag behavior
(plus the hardened variants) as a pure decision engine: given an event
it returns the granule writes to apply and the pointer tag to hand out.
Callers (simulator, attack scripts) own the address space and apply the
writes; policies own only their tagging state.

All policies operate in the 4-bit tag space of the systems they model;
the stores receiving the writes may keep wider tags.
"""

from dataclasses import dataclass

from .memmodel import irg

GRANULE = 16
FREED_TAG_SLUB = 0xE
MATCH_ALL = 0xF


def granules_for(size):
    """Granule count of an allocation (zero-byte mallocs still take one)."""
    return max(1, (size + GRANULE - 1) // GRANULE)


def _round_pow2(n):
    return 1 << max(4, (n - 1).bit_length())


@dataclass
class AllocationRecord:
    """One live (or freed) allocation as the policies see it."""

    start: int
    size: int
    granules: int
    tag: int            # current tag of the allocation's granules
    pointer_tag: int    # tag embedded in the pointer given to the program
    live: bool = True
    slack_granules: int = 0


@dataclass
class MallocResult:
    record: AllocationRecord
    writes: list          # [(byte address, granule count, tag), ...]


@dataclass
class FreeResult:
    writes: list
    rejected: bool = False


class TaggingPolicy:
    """Base: random non-zero tag at malloc, nothing at free."""

    name = "base"
    metadata_granule = False
    has_double_free_check = False

    def __init__(self, rng, metadata=None):
        self.rng = rng
        if metadata is not None:
            self.metadata_granule = metadata

    def malloc(self, addr, size):
        raise NotImplementedError

    def free(self, record, pointer_tag=None):
        raise NotImplementedError

    def _check_free(self, record, pointer_tag):
        """Double-free style check; returns True when the free is rejected."""
        if not self.has_double_free_check or pointer_tag is None:
            return False
        if pointer_tag == record.tag:
            return False
        return True


class GlibcPolicy(TaggingPolicy):
    """Random non-zero allocation tags, zero-tagged metadata granule in
    front of every allocation, freed granules re-tagged to zero, and a
    tag-match check on free."""

    name = "glibc"
    metadata_granule = True
    has_double_free_check = True

    def malloc(self, addr, size):
        g = granules_for(size)
        tag = irg(self.rng, 4, (0,))
        writes = []
        if self.metadata_granule:
            writes.append((addr - GRANULE, 1, self._metadata_tag(tag)))
        writes.append((addr, g, tag))
        return MallocResult(AllocationRecord(addr, size, g, tag, tag), writes)

    def _metadata_tag(self, alloc_tag):
        return 0

    def _free_tag(self, record):
        return 0

    def free(self, record, pointer_tag=None):
        if self._check_free(record, pointer_tag):
            return FreeResult([], rejected=True)
        tag = self._free_tag(record)
        record.live = False
        record.tag = tag
        return FreeResult([(record.start, record.granules, tag)])


class GlibcImprovedPolicy(GlibcPolicy):
    """Hardened variant: the metadata granule gets a random tag different
    from the allocation to its right, and freed granules get a random
    non-zero tag different from their current one."""

    name = "glibc-improved"

    def _metadata_tag(self, alloc_tag):
        return irg(self.rng, 4, (alloc_tag,))

    def _free_tag(self, record):
        return irg(self.rng, 4, (0, record.tag))


class LinuxSlubPolicy(TaggingPolicy):
    """Kernel slab tagging: random tags excluding 0xE/0xF, power-of-two
    size classes whose rounding slack is tagged 0xE, freed granules
    re-tagged 0xE, and a free check that also accepts the match-all tag."""

    name = "slub"
    has_double_free_check = True

    def malloc(self, addr, size):
        g = granules_for(size)
        class_granules = _round_pow2(max(size, 1)) // GRANULE
        slack = class_granules - g
        tag = irg(self.rng, 4, (FREED_TAG_SLUB, MATCH_ALL))
        writes = [(addr, g, tag)]
        if slack > 0:
            writes.append((addr + g * GRANULE, slack, FREED_TAG_SLUB))
        rec = AllocationRecord(addr, size, g, tag, tag, slack_granules=slack)
        return MallocResult(rec, writes)

    def _check_free(self, record, pointer_tag):
        if pointer_tag is None:
            return False
        return pointer_tag != record.tag and pointer_tag != MATCH_ALL

    def free(self, record, pointer_tag=None):
        if self._check_free(record, pointer_tag):
            return FreeResult([], rejected=True)
        record.live = False
        record.tag = FREED_TAG_SLUB
        return FreeResult([(record.start, record.granules, FREED_TAG_SLUB)])


class ScudoPolicy(TaggingPolicy):
    """Size-class chunk tagging: random non-zero tags (parity tied to the
    chunk index when odd-even mode is on), a zero-tagged header granule in
    front and a zero guard granule after each allocation, random non-zero
    re-tagging at free, and the re-use shortcut that keeps the free-time
    tag when the same start address is handed out again."""

    name = "scudo"
    metadata_granule = True

    def __init__(self, rng, odd_even=False, metadata=None):
        super().__init__(rng, metadata)
        self.odd_even = odd_even
        self._last_free = {}

    def chunk_index(self, addr, size):
        return (addr & 0xFFF) // (granules_for(size) * GRANULE)

    def _draw(self, addr, size):
        if not self.odd_even:
            return irg(self.rng, 4, (0,))
        parity = self.chunk_index(addr, size) & 1
        while True:
            t = irg(self.rng, 4, (0,))
            if t & 1 == parity:
                return t

    def malloc(self, addr, size):
        g = granules_for(size)
        reuse = self._last_free.pop(addr, None)
        writes = []
        if reuse is not None:
            tag, old_g = reuse
            if g > old_g:
                writes.append((addr + old_g * GRANULE, g - old_g, tag))
        else:
            tag = self._draw(addr, size)
            if self.metadata_granule:
                writes.append((addr - GRANULE, 1, 0))
            writes.append((addr, g, tag))
        writes.append((addr + g * GRANULE, 1, 0))    # trailing guard granule
        return MallocResult(AllocationRecord(addr, size, g, tag, tag), writes)

    def free(self, record, pointer_tag=None):
        tag = self._draw(record.start, record.size)
        record.live = False
        record.tag = tag
        self._last_free[record.start] = (tag, record.granules)
        return FreeResult([(record.start, record.granules, tag)])


class ChromePolicy(TaggingPolicy):
    """Partitioned-heap tagging: random tag at malloc, tag incremented at
    free, and the incremented tag re-used when the freed slot is handed
    out again."""

    name = "chrome"

    def __init__(self, rng, metadata=None):
        super().__init__(rng, metadata)
        self._freed = {}

    def _delta(self, addr):
        return 1

    def malloc(self, addr, size):
        g = granules_for(size)
        reuse = self._freed.pop(addr, None)
        if reuse is not None and reuse[1] >= g:
            tag = reuse[0]
            writes = []
        else:
            tag = self.rng.randrange(16)
            writes = [(addr, g, tag)]
        return MallocResult(AllocationRecord(addr, size, g, tag, tag), writes)

    def free(self, record, pointer_tag=None):
        tag = (record.tag + self._delta(record.start)) & 0xF
        record.live = False
        record.tag = tag
        self._freed[record.start] = (tag, record.granules)
        return FreeResult([(record.start, record.granules, tag)])


class ChromeRandomOddDeltaPolicy(ChromePolicy):
    """Hardened variant: free advances tags by a process-global random odd
    offset instead of always one, so every tag still cycles through all 16
    values but the attacker no longer knows the step."""

    name = "chrome-odd-delta"

    def __init__(self, rng, metadata=None):
        super().__init__(rng, metadata)
        self.delta = rng.randrange(8) * 2 + 1

    def _delta(self, addr):
        return self.delta


class ChromeDeltaTablePolicy(ChromePolicy):
    """Hardened variant: a small table of random odd offsets, selected by
    the low-order bits of the allocation's start address."""

    name = "chrome-delta-table"
    TABLE_SIZE = 4

    def __init__(self, rng, metadata=None):
        super().__init__(rng, metadata)
        self.deltas = [rng.randrange(8) * 2 + 1 for _ in range(self.TABLE_SIZE)]

    def _delta(self, addr):
        return self.deltas[(addr >> 4) & (self.TABLE_SIZE - 1)]


def step_tag(tag, delta):
    """Advance a stack tag by an offset, skipping the excluded value 0
    the way tag-stepping pointer arithmetic does."""
    t = (tag + delta) & 0xF
    return t if t else (t + 1) & 0xF


class LlvmStackPolicy(TaggingPolicy):
    """Stack-frame tagging: the frame base gets a random non-zero tag and
    each successive variable advances the tag by one (skipping zero).
    Frames are torn down by re-tagging to zero."""

    name = "llvm-stack"
    random_odd_delta = False

    def __init__(self, rng, metadata=None):
        super().__init__(rng, metadata)
        self._base = None
        self._tag = None
        self.delta = 1

    def new_frame(self):
        self._base = irg(self.rng, 4, (0,))
        self._tag = None
        if self.random_odd_delta:
            self.delta = self.rng.randrange(8) * 2 + 1
        return self._base

    def next_var_tag(self):
        if self._base is None:
            self.new_frame()
        if self._tag is None:
            self._tag = self._base
        else:
            self._tag = step_tag(self._tag, self.delta)
        return self._tag

    def malloc(self, addr, size):
        g = granules_for(size)
        tag = self.next_var_tag()
        return MallocResult(AllocationRecord(addr, size, g, tag, tag),
                            [(addr, g, tag)])

    def free(self, record, pointer_tag=None):
        record.live = False
        record.tag = 0
        return FreeResult([(record.start, record.granules, 0)])


class LlvmStackOddDeltaPolicy(LlvmStackPolicy):
    """Hardened variant: each frame samples a fresh random odd tag step."""

    name = "llvm-stack-odd-delta"
    random_odd_delta = True


POLICIES = {
    "glibc": GlibcPolicy,
    "glibc-improved": GlibcImprovedPolicy,
    "slub": LinuxSlubPolicy,
    "scudo": ScudoPolicy,
    "scudo-odd-even": lambda rng, metadata=None: ScudoPolicy(
        rng, odd_even=True, metadata=metadata),
    "chrome": ChromePolicy,
    "chrome-odd-delta": ChromeRandomOddDeltaPolicy,
    "chrome-delta-table": ChromeDeltaTablePolicy,
    "llvm-stack": LlvmStackPolicy,
    "llvm-stack-odd-delta": LlvmStackOddDeltaPolicy,
}


def make_policy(name, rng, metadata=None):
    try:
        factory = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy: {name!r}") from None
    return factory(rng, metadata=metadata)


def on_malloc(policy, addr, size, rng, mem):
    """Apply a policy's malloc decision to a tagged memory; returns the
    allocation record (whose pointer tag forms the returned address)."""
    del rng  # policies own their generator; kept for signature parity
    result = policy.malloc(addr, size)
    for waddr, wg, wtag in result.writes:
        mem.stg_range_addr(waddr, wg, wtag)
    return result.record


def on_free(policy, record, rng, mem, pointer_tag=None):
    """Apply a policy's free decision to a tagged memory; returns True
    when the free was rejected by the policy's check."""
    del rng
    result = policy.free(record, pointer_tag)
    for waddr, wg, wtag in result.writes:
        mem.stg_range_addr(waddr, wg, wtag)
    return result.rejected
