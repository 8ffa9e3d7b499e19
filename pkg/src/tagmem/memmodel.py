"""Desk-scale tagged-memory model.

Pages of granule tags (backed by the adaptive page store), tag-checked
loads and stores with synchronous/asynchronous fault handling, the
privileged match-all tag, optional hardware-invalid tags, random tag
generation with exclusion sets, and tagged-pointer arithmetic.

Only tags and access outcomes are modeled; the attacks this feeds
succeed or fail purely on whether the tag check passes.
"""

import enum
from dataclasses import dataclass, field

from .pagestore import GRANULE_BYTES, PAGE_BYTES, PageTagStore

ADDR_MASK = (1 << 56) - 1
WORD_MASK = (1 << 64) - 1
MATCH_ALL_TAG = 0xF


class CheckMode(enum.Enum):
    OFF = "off"
    SYNC = "sync"
    ASYNC = "async"


class UnmappedAddressError(Exception):
    """Access to a page the model has never mapped (not a tag fault)."""


@dataclass(frozen=True)
class TaggedAddress:
    """A byte address paired with the tag carried in the pointer."""

    address: int
    tag: int

    def encode64(self, bits=4):
        """Pack into one 64-bit word with the tag in the top byte.

        Defined for 4- and 8-bit tags only; wider tags are carried
        logically and have no single-word form.
        """
        if bits not in (4, 8):
            raise ValueError("64-bit packing is defined for 4/8-bit tags only")
        if self.address > ADDR_MASK:
            raise ValueError("address exceeds 56 bits")
        return (self.address & ADDR_MASK) | ((self.tag & 0xFF) << 56)

    @classmethod
    def decode64(cls, word, bits=4):
        if bits not in (4, 8):
            raise ValueError("64-bit packing is defined for 4/8-bit tags only")
        return cls(word & ADDR_MASK, (word >> 56) & ((1 << bits) - 1))


def addg(taddr, addr_delta, tag_delta, bits=4):
    """Pointer arithmetic that moves address and tag independently."""
    mask = (1 << bits) - 1
    return TaggedAddress((taddr.address + addr_delta) & WORD_MASK,
                         (taddr.tag + tag_delta) & mask)


def subg(taddr, addr_delta, tag_delta, bits=4):
    mask = (1 << bits) - 1
    return TaggedAddress((taddr.address - addr_delta) & WORD_MASK,
                         (taddr.tag - tag_delta) & mask)


def irg(rng, bits=4, excluded=()):
    """Uniform random tag avoiding the excluded values."""
    mask = (1 << bits) - 1
    excluded = set(excluded)
    if len(excluded) > mask:
        raise ValueError("every tag value is excluded")
    while True:
        t = rng.randrange(mask + 1)
        if t not in excluded:
            return t


@dataclass(frozen=True)
class CheckConfig:
    mode: CheckMode = CheckMode.SYNC
    match_all_enabled: bool = False
    privileged: bool = False
    invalid_tag: int | None = None


@dataclass(frozen=True)
class FaultRecord:
    index: int
    address: int
    addr_tag: int
    mem_tag: int
    kind: str


class FaultLog:
    """Accumulates tag-check faults in asynchronous mode until drained."""

    def __init__(self):
        self.records = []

    @property
    def pending(self):
        return bool(self.records)

    def drain(self):
        out = self.records
        self.records = []
        return out


@dataclass(frozen=True)
class AccessResult:
    ok: bool
    fault: FaultRecord | None = None


class TaggedMemory:
    """Granule-tagged address space with lazily instantiated pages."""

    def __init__(self, bits=4, config=None, store_factory=PageTagStore):
        self.bits = bits
        self.config = config if config is not None else CheckConfig()
        self._store_factory = store_factory
        self.pages = {}
        self.fault_log = FaultLog()
        self._access_index = 0

    # -- page/tag plumbing ----------------------------------------------------

    def page(self, page_index):
        st = self.pages.get(page_index)
        if st is None:
            st = self._store_factory(self.bits)
            self.pages[page_index] = st
        return st

    def is_mapped(self, address):
        return (address >> 12) in self.pages

    def reset(self):
        for st in self.pages.values():
            st.page_reset()
        self.fault_log = FaultLog()
        self._access_index = 0

    def stg_range_addr(self, address, granule_count, tag):
        """Tag consecutive granules starting at the granule of ``address``,
        mapping pages on demand and splitting across page boundaries."""
        g = address >> 4
        remaining = granule_count
        while remaining > 0:
            page_index, gran = g >> 8, g & 0xFF
            chunk = min(remaining, 256 - gran)
            self.page(page_index).stg_range(gran, chunk, tag)
            g += chunk
            remaining -= chunk

    def ldg_addr(self, address):
        page_index = address >> 12
        st = self.pages.get(page_index)
        if st is None:
            raise UnmappedAddressError(hex(address))
        return st.ldg((address >> 4) & 0xFF)

    # -- checked accesses -------------------------------------------------------

    def checked_access(self, taddr, length, kind="load", config=None):
        """Tag-check a load or store spanning [address, address+length).

        Faults if any covered granule's tag differs from the pointer tag,
        unless the privileged match-all tag applies.  A configured invalid
        memory tag faults regardless of the pointer tag.  Synchronous mode
        reports the fault in the result; asynchronous mode logs it and
        reports success.
        """
        if kind not in ("load", "store"):
            raise ValueError(f"bad access kind: {kind}")
        if length <= 0:
            raise ValueError("access length must be positive")
        cfg = config if config is not None else self.config
        index = self._access_index
        self._access_index += 1
        if cfg.mode is CheckMode.OFF:
            return AccessResult(True)
        match_all = (cfg.match_all_enabled and cfg.privileged
                     and self.bits == 4 and taddr.tag == MATCH_ALL_TAG)
        first_g = taddr.address >> 4
        last_g = (taddr.address + length - 1) >> 4
        for g in range(first_g, last_g + 1):
            st = self.pages.get(g >> 8)
            if st is None:
                raise UnmappedAddressError(hex(g << 4))
            mem_tag = st.ldg(g & 0xFF)
            bad = (cfg.invalid_tag is not None and mem_tag == cfg.invalid_tag) \
                or (not match_all and mem_tag != taddr.tag)
            if bad:
                rec = FaultRecord(index, g << 4, taddr.tag, mem_tag, kind)
                if cfg.mode is CheckMode.SYNC:
                    return AccessResult(False, rec)
                self.fault_log.records.append(rec)
                return AccessResult(True)
        return AccessResult(True)

    def drain_faults(self):
        """Return and clear the accumulated async fault records."""
        return self.fault_log.drain()
