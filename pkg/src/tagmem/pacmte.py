"""Combined MAC+tag pointer scheme over the run store.

Every allocation gets a fresh random 16-bit memory tag; the pointer
carries a 16-bit MAC computed over (memory tag, allocation start) under
a per-process secret key.  Verification looks the accessed address up in
the page's run store, recomputes the MAC from the run's start and tag,
and compares.  Once a page has fallen back to its 4-bit array, only the
low four bits of the pointer MAC are stored and checked, so the scheme
degrades to plain 4-bit tagging there.

The MAC primitive is keyed BLAKE2b truncated to 16 bits: a standard
keyed pseudorandom function standing in for a hardware block cipher
(only PRF behavior is exercised).  Committed test vectors pin the
construction.
"""

import hashlib
import struct
from dataclasses import dataclass

TAG_BITS = 16
TAG_MASK = 0xFFFF
KEY_BYTES = 16


class PacKey:
    """128-bit per-process MAC secret."""

    __slots__ = ("value",)

    def __init__(self, value):
        if len(value) != KEY_BYTES:
            raise ValueError("key must be exactly 16 bytes")
        self.value = bytes(value)

    @classmethod
    def generate(cls, rng):
        return cls(bytes(rng.randrange(256) for _ in range(KEY_BYTES)))

    @classmethod
    def from_hex(cls, text):
        return cls(bytes.fromhex(text))

    def hex(self):
        return self.value.hex()


def compute_tp(key, mem_tag, start_addr, context=b""):
    """16-bit pointer MAC over (memory tag, allocation start[, context])."""
    msg = struct.pack("<HQ", mem_tag & TAG_MASK,
                      start_addr & 0xFFFFFFFFFFFFFFFF) + context
    digest = hashlib.blake2b(msg, key=key.value, digest_size=2).digest()
    return digest[0] | (digest[1] << 8)


def verify_access(key, address, pointer_tag, store, context=b""):
    """Check a 16-bit pointer MAC against the page's stored tags.

    With the run store live, the run covering the address supplies the
    allocation start and memory tag for MAC recomputation.  After the
    page's switch to the 4-bit array, only the low nibble is compared.
    """
    granule = (address >> 4) & 0xFF
    if store.mode == "array":
        return (pointer_tag & 0xF) == store.ldg(granule)
    start_granule, mem_tag = store.run_containing(granule)
    start_addr = (address & ~0xFFF) | (start_granule << 4)
    return pointer_tag == compute_tp(key, mem_tag, start_addr, context)


@dataclass
class PacAllocation:
    start: int
    size: int
    granules: int
    mem_tag: int
    pointer_tag: int
    live: bool = True


class PacHeap:
    """Allocation front end pairing the run store with pointer MACs.

    Tracks live allocations so that when a page falls back to its 4-bit
    array, each live allocation's granules are re-materialized with the
    low nibble of its *pointer* MAC (what the check compares against in
    array mode), keeping legitimately issued pointers valid.
    """

    def __init__(self, key, store, rng, page_base=0, context=b""):
        if store.width_bits != TAG_BITS:
            raise ValueError("the MAC+tag scheme stores 16-bit memory tags")
        self.key = key
        self.store = store
        self.rng = rng
        self.page_base = page_base & ~0xFFF
        self.context = context
        self.allocations = {}

    def _granule(self, addr):
        return (addr - self.page_base) >> 4

    def alloc(self, addr, size):
        """Tag one allocation (a single run) and hand out its pointer MAC."""
        if addr & 0xF:
            raise ValueError("allocations are granule aligned")
        granules = max(1, (size + 15) // 16)
        g0 = self._granule(addr)
        if not (0 <= g0 and g0 + granules <= 256):
            raise ValueError("allocation outside the heap page")
        mem_tag = self.rng.getrandbits(TAG_BITS)
        pointer_tag = compute_tp(self.key, mem_tag, addr, self.context)
        if self.store.mode == "array":
            self.store.stg_range(g0, granules, pointer_tag & 0xF)
        else:
            self.store.stg_range(g0, granules, mem_tag)
            if self.store.mode == "array":
                # this write forced the fallback: store pointer-MAC nibbles
                self._rematerialize()
                self.store.stg_range(g0, granules, pointer_tag & 0xF)
        rec = PacAllocation(addr, size, granules, mem_tag, pointer_tag)
        self.allocations[addr] = rec
        return addr, pointer_tag

    def free(self, addr):
        """Re-tag the freed run with a fresh random memory tag."""
        rec = self.allocations.pop(addr, None)
        if rec is None or not rec.live:
            raise ValueError(f"free of unknown address {addr:#x}")
        rec.live = False
        new_tag = self.rng.getrandbits(TAG_BITS)
        g0 = self._granule(addr)
        before = self.store.mode
        self.store.stg_range(g0, rec.granules, new_tag)
        if before == "btree" and self.store.mode == "array":
            self._rematerialize()

    def verify(self, address, pointer_tag):
        return verify_access(self.key, address, pointer_tag, self.store,
                             self.context)

    def _rematerialize(self):
        # array fallback stores the low nibble of each live pointer MAC
        for rec in self.allocations.values():
            if rec.live:
                self.store.stg_range(self._granule(rec.start), rec.granules,
                                     rec.pointer_tag & 0xF)
