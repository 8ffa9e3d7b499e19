"""tagmem: compressed per-page tag storage and tagged-memory simulation.

The package stores memory tags as per-page run-length-encoded BTrees
inside the 128-byte-per-page budget of a flat 4-bit tag array, models
tag-checked memory with the surveyed allocator tagging policies and
their attacks, implements the combined MAC+tag pointer scheme, and
drives all of it from recorded or synthetic heap traces.
"""

from .pagestore import (GRANULE_BYTES, GRANULES_PER_PAGE, PAGE_BUFFER_BYTES,
                        PAGE_BYTES, PageTagStore, TagRegion, TagWidth,
                        tag_width)

__all__ = [
    "GRANULE_BYTES",
    "GRANULES_PER_PAGE",
    "PAGE_BUFFER_BYTES",
    "PAGE_BYTES",
    "PageTagStore",
    "TagRegion",
    "TagWidth",
    "tag_width",
]

__version__ = "0.1.0"
