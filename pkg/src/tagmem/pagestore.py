"""Per-page compressed tag storage.

Each 4KB page of tagged memory has 256 sixteen-byte granules and a fixed
128-byte buffer for its tags (the same budget a flat 4-bit tag array
would use).  Inside that buffer we keep a run-length encoding of the
page's tags in a 4,5-BTree: one key per run, where a run is a maximal
stretch of consecutive granules sharing a tag.  When the tree outgrows
the buffer, the page irreversibly falls back to a flat 4-bit array until
it is reset.

Buffer layout (all offsets relative to the page's 128-byte buffer):

    byte 0        root node offset (byte offset of the root's slot)
    bytes 1-2     free-slot bitmap, little-endian; bit s set = slot s free
    bytes 3..     node slots: slot s occupies [3 + s*node_size, ...)

Node serialization, ``node_size = 11 + 4t`` bytes for t-byte tags:

    bytes 0-3     keys[4]        run start granules, ascending
    bytes 4-8     children[5]    child node byte offsets, 0 = none
    byte  9       parent         parent node byte offset, 0 = root
    bytes 10..    tags           4 tag values; 4-bit tags pack two per
                                 byte (low nibble first), wider tags are
                                 little-endian at fixed strides
    last byte     count          number of keys in use (1..4)

Unused key/tag/child slots and freed node slots are zero-filled so a
given op history always produces the same buffer image.

The whole-page mode flag (BTree vs array) is the 0.125-byte share of the
per-page metadata; it lives outside the 128-byte buffer (packed one bit
per page at the region level) but is charged to the page in
``space_used``:  metadata = 1 (root) + 2 (bitmap) + 0.125 = 3.125 bytes.
"""

from fractions import Fraction

GRANULE_BYTES = 16
PAGE_BYTES = 4096
GRANULES_PER_PAGE = 256
PAGE_BUFFER_BYTES = 128

_NODE_BASE = 3                      # metadata: root byte + 2 bitmap bytes
METADATA_SPACE = Fraction(25, 8)    # 3.125: root + bitmap + 1-bit mode flag

MODE_BTREE = "btree"
MODE_ARRAY = "array"


class _PageFull(Exception):
    """Internal: no free node slot; the mutation must fall back to the array."""


class TagWidth:
    """Layout constants derived from the configured tag size."""

    __slots__ = ("bits", "tag_mask", "tag_bytes", "tagarr_bytes", "node_size",
                 "max_nodes", "max_runs", "init_image")

    def __init__(self, bits):
        if bits not in (4, 8, 16, 32):
            raise ValueError(f"unsupported tag width: {bits}")
        self.bits = bits
        self.tag_mask = (1 << bits) - 1
        self.tag_bytes = Fraction(bits, 8)          # 0.5, 1, 2, 4
        self.tagarr_bytes = bits // 2               # 4 tags: 2, 4, 8, 16
        self.node_size = 11 + self.tagarr_bytes     # 13, 15, 19, 27
        budget = PAGE_BUFFER_BYTES - METADATA_SPACE
        self.max_nodes = int(budget / self.node_size)   # 9, 8, 6, 4
        self.max_runs = 4 * self.max_nodes              # 36, 32, 24, 16
        self.init_image = self._build_init_image()

    def _build_init_image(self):
        img = bytearray(PAGE_BUFFER_BYTES)
        img[0] = _NODE_BASE                         # root in slot 0
        free_bits = ((1 << self.max_nodes) - 1) & ~1
        img[1] = free_bits & 0xFF
        img[2] = free_bits >> 8
        # root node: single key 0 tagged 0, leaf
        img[_NODE_BASE + self.node_size - 1] = 1    # count
        return bytes(img)

    def __repr__(self):
        return f"TagWidth({self.bits})"


_WIDTHS = {bits: TagWidth(bits) for bits in (4, 8, 16, 32)}


def tag_width(bits):
    """Return the shared TagWidth constants for a 4/8/16/32-bit tag size."""
    try:
        return _WIDTHS[bits]
    except KeyError:
        raise ValueError(f"unsupported tag width: {bits}") from None


class PageTagStore:
    """Adaptive tag store for one 4KB page.

    Starts as a run-length BTree holding full-width tags; switches (one
    way) to a flat 4-bit array when a mutation would not fit in the
    128-byte buffer.  ``page_reset`` returns it to a fresh BTree.
    """

    __slots__ = ("_w", "_buf", "_array", "_n", "_m", "_depth", "_switches",
                 "_co", "_nib", "_tpb", "_mode_hook")

    def __init__(self, bits=4, buffer=None, mode_hook=None):
        self._w = tag_width(bits)
        if buffer is None:
            buffer = bytearray(PAGE_BUFFER_BYTES)
        elif len(buffer) != PAGE_BUFFER_BYTES:
            raise ValueError("page buffer must be exactly 128 bytes")
        self._buf = buffer
        self._co = self._w.node_size - 1        # count byte offset in a node
        self._nib = self._w.bits == 4
        self._tpb = self._w.bits // 8           # whole bytes per tag (0 for 4-bit)
        self._mode_hook = mode_hook
        self._reset_state()

    # -- basic introspection ------------------------------------------------

    @property
    def width_bits(self):
        return self._w.bits

    @property
    def width(self):
        return self._w

    @property
    def mode(self):
        return MODE_ARRAY if self._array else MODE_BTREE

    @property
    def run_count(self):
        """Number of runs: tree key count, or a linear scan in array mode."""
        if self._array:
            return len(self.enumerate_runs())
        return self._n

    @property
    def node_count(self):
        return 0 if self._array else self._m

    @property
    def switch_count(self):
        return self._switches

    def image(self):
        """The current 128-byte buffer image."""
        return bytes(self._buf)

    def space_used(self):
        """Exact storage charge in bytes: m*(11+4t) + 3.125, or 128 in array mode."""
        if self._array:
            return Fraction(PAGE_BUFFER_BYTES)
        return self._m * self._w.node_size + METADATA_SPACE

    def depth(self):
        """Root-to-leaf depth of the tree; None once switched to the array."""
        if self._array:
            return None
        return self._depth

    # -- lifecycle ----------------------------------------------------------

    def _reset_state(self):
        self._buf[:] = self._w.init_image
        self._array = False
        self._n = 1
        self._m = 1
        self._depth = 1
        self._switches = 0

    def page_reset(self):
        """Back to the freshly-mapped state: one zero run, BTree mode."""
        was_array = self._array
        self._reset_state()
        if was_array and self._mode_hook is not None:
            self._mode_hook(self)

    def switch_to_array(self):
        """Materialize tags as a flat 4-bit array (keeping each tag's low
        nibble) and stay in array mode until the page is reset.  A no-op if
        already switched."""
        if self._array:
            return
        runs = self.enumerate_runs()
        out = bytearray(PAGE_BUFFER_BYTES)
        for i, (start, tag) in enumerate(runs):
            end = runs[i + 1][0] if i + 1 < len(runs) else GRANULES_PER_PAGE
            t4 = tag & 0xF
            if t4:
                for g in range(start, end):
                    out[g >> 1] |= t4 << ((g & 1) << 2)
        self._buf[:] = out
        self._array = True
        self._switches += 1
        if self._mode_hook is not None:
            self._mode_hook(self)

    # -- tag reads ----------------------------------------------------------

    def ldg(self, granule):
        """Tag of one granule."""
        if not 0 <= granule < GRANULES_PER_PAGE:
            raise ValueError(f"granule out of range: {granule}")
        buf = self._buf
        if self._array:
            return (buf[granule >> 1] >> ((granule & 1) << 2)) & 0xF
        off, i = self._find_le(granule)
        return self._tag_get(off, i)

    def run_containing(self, granule):
        """(start granule, tag) of the run covering ``granule``; BTree mode only."""
        if not 0 <= granule < GRANULES_PER_PAGE:
            raise ValueError(f"granule out of range: {granule}")
        if self._array:
            raise RuntimeError("run_containing is undefined in array mode")
        off, i = self._find_le(granule)
        return self._buf[off + i], self._tag_get(off, i)

    def enumerate_runs(self):
        """Ordered list of (start granule, tag) runs."""
        if self._array:
            buf = self._buf
            runs = []
            prev = -1
            for g in range(GRANULES_PER_PAGE):
                t = (buf[g >> 1] >> ((g & 1) << 2)) & 0xF
                if t != prev:
                    runs.append((g, t))
                    prev = t
            return runs
        runs = []
        self._walk_runs(self._buf[0], runs)
        return runs

    def _walk_runs(self, off, out):
        buf = self._buf
        cnt = buf[off + self._co]
        leaf = buf[off + 4] == 0
        for i in range(cnt):
            if not leaf:
                self._walk_runs(buf[off + 4 + i], out)
            out.append((buf[off + i], self._tag_get(off, i)))
        if not leaf:
            self._walk_runs(buf[off + 4 + cnt], out)

    # -- tag writes ---------------------------------------------------------

    def stg(self, granule, tag):
        """Set one granule's tag."""
        self.stg_range(granule, 1, tag)

    def stg_range(self, first, count, tag):
        """Tag ``count`` consecutive granules starting at ``first``.

        One run insertion plus removal of covered keys; adjacent runs with
        equal tags are merged.  If the tree cannot absorb the update within
        its buffer, the page switches to the 4-bit array first and the write
        lands there with the tag's low nibble.
        """
        if count == 0:
            return
        if count < 0 or first < 0 or first + count > GRANULES_PER_PAGE:
            raise ValueError(f"granule range out of bounds: [{first}, {first + count})")
        if not 0 <= tag <= self._w.tag_mask:
            raise ValueError(f"tag out of range for {self._w.bits}-bit width: {tag}")
        if self._array:
            self._array_fill(first, first + count, tag & 0xF)
            return
        snap = bytes(self._buf)
        state = (self._n, self._m, self._depth)
        try:
            self._tree_write_range(first, first + count, tag)
        except _PageFull:
            self._buf[:] = snap
            self._n, self._m, self._depth = state
            self.switch_to_array()
            self._array_fill(first, first + count, tag & 0xF)

    def _array_fill(self, start, end, t4):
        buf = self._buf
        for g in range(start, end):
            p = g >> 1
            if g & 1:
                buf[p] = (buf[p] & 0x0F) | (t4 << 4)
            else:
                buf[p] = (buf[p] & 0xF0) | t4

    def _tree_write_range(self, first, end, tag):
        # tag beyond the write's right edge, captured before any mutation
        right_tag = self._tree_ldg(end) if end < GRANULES_PER_PAGE else -1
        # drop every run start strictly inside the written range
        while True:
            k = self._next_key_gt(first)
            if k < 0 or k >= end:
                break
            self._bt_delete(k)
        if end < GRANULES_PER_PAGE:
            off, i = self._find_le(end)
            has_end_key = self._buf[off + i] == end
            if tag == right_tag:
                if has_end_key:
                    self._bt_delete(end)
            elif not has_end_key:
                self._bt_insert(end, right_tag)
        if first == 0:
            off, i = self._find_le(0)           # key 0 always exists
            self._tag_set(off, i, tag)
        else:
            left_tag = self._tree_ldg(first - 1)
            off, i = self._find_le(first)
            if left_tag == tag:
                if self._buf[off + i] == first:
                    self._bt_delete(first)      # left neighbor absorbs the range
            elif self._buf[off + i] == first:
                self._tag_set(off, i, tag)
            else:
                self._bt_insert(first, tag)

    # -- node byte accessors --------------------------------------------------

    def _tag_get(self, off, i):
        buf = self._buf
        if self._nib:
            return (buf[off + 10 + (i >> 1)] >> ((i & 1) << 2)) & 0xF
        p = off + 10 + i * self._tpb
        v = 0
        for k in range(self._tpb):
            v |= buf[p + k] << (8 * k)
        return v

    def _tag_set(self, off, i, tag):
        buf = self._buf
        if self._nib:
            p = off + 10 + (i >> 1)
            if i & 1:
                buf[p] = (buf[p] & 0x0F) | ((tag & 0xF) << 4)
            else:
                buf[p] = (buf[p] & 0xF0) | (tag & 0xF)
            return
        p = off + 10 + i * self._tpb
        for k in range(self._tpb):
            buf[p + k] = (tag >> (8 * k)) & 0xFF

    def _read_node(self, off):
        buf = self._buf
        cnt = buf[off + self._co]
        keys = [buf[off + k] for k in range(cnt)]
        tags = [self._tag_get(off, k) for k in range(cnt)]
        if buf[off + 4]:
            kids = [buf[off + 4 + k] for k in range(cnt + 1)]
        else:
            kids = []
        return keys, tags, kids

    def _write_node(self, off, keys, tags, kids):
        buf = self._buf
        n = len(keys)
        for k in range(n):
            buf[off + k] = keys[k]
            self._tag_set(off, k, tags[k])
        for k in range(n, 4):
            buf[off + k] = 0
            self._tag_set(off, k, 0)
        nk = len(kids)
        for k in range(nk):
            buf[off + 4 + k] = kids[k]
        for k in range(nk, 5):
            buf[off + 4 + k] = 0
        buf[off + self._co] = n

    def _set_parent(self, off, parent):
        self._buf[off + 9] = parent

    def _alloc_node(self):
        buf = self._buf
        bm = buf[1] | (buf[2] << 8)
        if bm == 0:
            raise _PageFull
        s = (bm & -bm).bit_length() - 1
        bm &= bm - 1
        buf[1] = bm & 0xFF
        buf[2] = bm >> 8
        off = _NODE_BASE + s * self._w.node_size
        ns = self._w.node_size
        buf[off:off + ns] = bytes(ns)
        self._m += 1
        return off

    def _free_node(self, off):
        buf = self._buf
        s = (off - _NODE_BASE) // self._w.node_size
        bm = buf[1] | (buf[2] << 8) | (1 << s)
        buf[1] = bm & 0xFF
        buf[2] = bm >> 8
        ns = self._w.node_size
        buf[off:off + ns] = bytes(ns)
        self._m -= 1

    # -- tree search ----------------------------------------------------------

    def _find_le(self, g):
        """Location (node offset, key index) of the largest key <= g."""
        buf = self._buf
        co = self._co
        off = buf[0]
        boff = bi = 0
        while True:
            cnt = buf[off + co]
            i = 0
            while i < cnt and buf[off + i] <= g:
                i += 1
            if i:
                boff, bi = off, i - 1
            child = buf[off + 4 + i]
            if not child:
                return boff, bi
            off = child

    def _tree_ldg(self, g):
        off, i = self._find_le(g)
        return self._tag_get(off, i)

    def _next_key_gt(self, g):
        """Smallest key > g, or -1."""
        buf = self._buf
        co = self._co
        off = buf[0]
        best = -1
        while True:
            cnt = buf[off + co]
            i = 0
            while i < cnt and buf[off + i] <= g:
                i += 1
            if i < cnt:
                best = buf[off + i]
            child = buf[off + 4 + i]
            if not child:
                return best
            off = child

    # -- tree mutation ----------------------------------------------------------

    def _bt_insert(self, key, tag):
        """Insert a new run key (must be absent)."""
        buf = self._buf
        co = self._co
        off = buf[0]
        while True:
            cnt = buf[off + co]
            i = 0
            while i < cnt and buf[off + i] < key:
                i += 1
            child = buf[off + 4 + i]
            if not child:
                break
            off = child
        self._insert_into(off, i, key, tag, 0)
        self._n += 1

    def _insert_into(self, off, pos, key, tag, rchild):
        keys, tags, kids = self._read_node(off)
        keys.insert(pos, key)
        tags.insert(pos, tag)
        if kids or rchild:
            kids.insert(pos + 1, rchild)
        if len(keys) <= 4:
            self._write_node(off, keys, tags, kids)
            if rchild:
                self._set_parent(rchild, off)
            return
        # split the 5-key overflow: 2 left, median up, 2 right
        new = self._alloc_node()
        mid_key, mid_tag = keys[2], tags[2]
        lk, rk = kids[:3], kids[3:]
        if not kids:
            lk = rk = []
        self._write_node(off, keys[:2], tags[:2], lk)
        self._write_node(new, keys[3:], tags[3:], rk)
        for c in rk:
            self._set_parent(c, new)
        if rchild and rchild in lk:
            self._set_parent(rchild, off)
        parent = self._buf[off + 9]
        if parent == 0:
            root = self._alloc_node()
            self._write_node(root, [mid_key], [mid_tag], [off, new])
            self._set_parent(off, root)
            self._set_parent(new, root)
            self._buf[0] = root
            self._depth += 1
            return
        buf = self._buf
        pcnt = buf[parent + self._co]
        p = 0
        while p < pcnt and buf[parent + p] < mid_key:
            p += 1
        self._insert_into(parent, p, mid_key, mid_tag, new)

    def _bt_delete(self, key):
        """Delete an existing run key, rebalancing as needed."""
        buf = self._buf
        co = self._co
        off = buf[0]
        while True:
            cnt = buf[off + co]
            i = 0
            while i < cnt and buf[off + i] < key:
                i += 1
            if i < cnt and buf[off + i] == key:
                break
            off = buf[off + 4 + i]
        if buf[off + 4]:
            # internal: swap in the predecessor from the rightmost leaf below
            leaf = buf[off + 4 + i]
            while buf[leaf + 4]:
                leaf = buf[leaf + 4 + buf[leaf + co]]
            lcnt = buf[leaf + co]
            buf[off + i] = buf[leaf + lcnt - 1]
            self._tag_set(off, i, self._tag_get(leaf, lcnt - 1))
            off, i = leaf, lcnt - 1
        keys, tags, kids = self._read_node(off)
        del keys[i], tags[i]
        self._write_node(off, keys, tags, [])
        self._n -= 1
        self._rebalance(off)

    def _rebalance(self, off):
        buf = self._buf
        co = self._co
        if off == buf[0]:
            if buf[off + co] == 0 and buf[off + 4]:
                child = buf[off + 4]
                buf[0] = child
                self._set_parent(child, 0)
                self._free_node(off)
                self._depth -= 1
            return
        if buf[off + co] >= 2:
            return
        parent = buf[off + 9]
        pcnt = buf[parent + co]
        idx = 0
        while buf[parent + 4 + idx] != off:
            idx += 1
        if idx > 0:
            left = buf[parent + 4 + idx - 1]
            if buf[left + co] > 2:
                self._rotate_from_left(parent, idx, left, off)
                return
        if idx < pcnt:
            right = buf[parent + 4 + idx + 1]
            if buf[right + co] > 2:
                self._rotate_from_right(parent, idx, off, right)
                return
        self._merge_children(parent, idx - 1 if idx > 0 else idx)

    def _rotate_from_left(self, parent, idx, left, node):
        keys, tags, kids = self._read_node(node)
        lkeys, ltags, lkids = self._read_node(left)
        keys.insert(0, self._buf[parent + idx - 1])
        tags.insert(0, self._tag_get(parent, idx - 1))
        if lkids:
            moved = lkids.pop()
            kids.insert(0, moved)
            self._set_parent(moved, node)
        self._buf[parent + idx - 1] = lkeys[-1]
        self._tag_set(parent, idx - 1, ltags[-1])
        self._write_node(left, lkeys[:-1], ltags[:-1], lkids)
        self._write_node(node, keys, tags, kids)

    def _rotate_from_right(self, parent, idx, node, right):
        keys, tags, kids = self._read_node(node)
        rkeys, rtags, rkids = self._read_node(right)
        keys.append(self._buf[parent + idx])
        tags.append(self._tag_get(parent, idx))
        if rkids:
            moved = rkids.pop(0)
            kids.append(moved)
            self._set_parent(moved, node)
        self._buf[parent + idx] = rkeys[0]
        self._tag_set(parent, idx, rtags[0])
        self._write_node(right, rkeys[1:], rtags[1:], rkids)
        self._write_node(node, keys, tags, kids)

    def _merge_children(self, parent, sep):
        buf = self._buf
        a = buf[parent + 4 + sep]
        b = buf[parent + 4 + sep + 1]
        akeys, atags, akids = self._read_node(a)
        bkeys, btags, bkids = self._read_node(b)
        akeys.append(buf[parent + sep])
        atags.append(self._tag_get(parent, sep))
        akeys += bkeys
        atags += btags
        akids += bkids
        for c in bkids:
            self._set_parent(c, a)
        self._write_node(a, akeys, atags, akids)
        self._free_node(b)
        pkeys, ptags, pkids = self._read_node(parent)
        del pkeys[sep], ptags[sep], pkids[sep + 1]
        self._write_node(parent, pkeys, ptags, pkids)
        self._rebalance(parent)

    # -- validation (test support) ---------------------------------------------

    def check_invariants(self):
        """Full structural validation; raises AssertionError on any breach."""
        buf = self._buf
        w = self._w
        if self._array:
            return
        free_bits = buf[1] | (buf[2] << 8)
        assert free_bits >> w.max_nodes == 0, "free bit set beyond last slot"
        used = [s for s in range(w.max_nodes) if not free_bits & (1 << s)]
        assert len(used) == self._m, "node count disagrees with bitmap"
        assert self.space_used() == self._m * w.node_size + METADATA_SPACE
        assert self.space_used() <= PAGE_BUFFER_BYTES
        # every freed slot and the slack after the last slot stay zeroed
        for s in range(w.max_nodes):
            if free_bits & (1 << s):
                off = _NODE_BASE + s * w.node_size
                assert not any(buf[off:off + w.node_size]), "freed slot not zeroed"
        tail = _NODE_BASE + w.max_nodes * w.node_size
        assert not any(buf[tail:]), "buffer tail not zeroed"

        root = buf[0]
        seen = []
        leaf_depths = []

        def walk(off, depth, lo, hi):
            seen.append(off)
            keys, tags, kids = self._read_node(off)
            cnt = len(keys)
            assert 1 <= cnt <= 4
            if off != root:
                assert cnt >= 2, "non-root node under-filled"
            assert all(lo <= k <= hi for k in keys)
            assert keys == sorted(set(keys)), "keys not strictly increasing"
            if kids:
                assert len(kids) == cnt + 1
                for j, c in enumerate(kids):
                    assert buf[c + 9] == off, "bad parent pointer"
                    clo = keys[j - 1] + 1 if j else lo
                    chi = keys[j] - 1 if j < cnt else hi
                    walk(c, depth + 1, clo, chi)
            else:
                leaf_depths.append(depth)

        assert buf[root + 9] == 0, "root parent must be 0"
        walk(root, 1, 0, GRANULES_PER_PAGE - 1)
        assert sorted(seen) == sorted(_NODE_BASE + s * w.node_size for s in used)
        assert len(set(leaf_depths)) == 1, "leaves at different depths"
        assert leaf_depths[0] == self._depth, "tracked depth wrong"
        runs = self.enumerate_runs()
        assert len(runs) == self._n, "tracked run count wrong"
        assert runs[0][0] == 0, "first run must start at granule 0"
        starts = [s for s, _ in runs]
        assert starts == sorted(set(starts))
        for (_, t1), (_, t2) in zip(runs, runs[1:]):
            assert t1 != t2, "adjacent runs share a tag"
        assert self._n <= 4 * self._m
        assert 2 * self._m <= self._n + 1
        limit = 3 if w.bits == 4 else 2
        assert self._depth <= limit, "depth bound exceeded"


class TagRegion:
    """Contiguous tag storage for many pages: 128 bytes per page plus a
    packed one-bit-per-page mode flag bitmap kept outside the page buffers."""

    def __init__(self, bits, num_pages):
        self._w = tag_width(bits)
        self.num_pages = num_pages
        self._buf = bytearray(PAGE_BUFFER_BYTES * num_pages)
        self._mode_bits = bytearray((num_pages + 7) // 8)
        self._stores = {}

    def page(self, index):
        if not 0 <= index < self.num_pages:
            raise IndexError(f"page index out of range: {index}")
        store = self._stores.get(index)
        if store is None:
            view = memoryview(self._buf)[
                index * PAGE_BUFFER_BYTES:(index + 1) * PAGE_BUFFER_BYTES]
            store = PageTagStore(
                self._w.bits, buffer=view,
                mode_hook=lambda st, i=index: self._sync_mode(i, st))
            store.page_reset()
            self._stores[index] = store
        return store

    def _sync_mode(self, index, store):
        if store.mode == MODE_ARRAY:
            self._mode_bits[index >> 3] |= 1 << (index & 7)
        else:
            self._mode_bits[index >> 3] &= ~(1 << (index & 7))

    def mode_flag(self, index):
        return bool(self._mode_bits[index >> 3] & (1 << (index & 7)))

    def page_image(self, index):
        return bytes(self._buf[index * PAGE_BUFFER_BYTES:
                               (index + 1) * PAGE_BUFFER_BYTES])

    def total_space(self):
        """Exact storage charge across instantiated pages."""
        return sum((st.space_used() for st in self._stores.values()),
                   Fraction(0))
