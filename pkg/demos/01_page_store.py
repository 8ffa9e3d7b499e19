"""Tour of the per-page run-length tag store.

A 4KB page has 256 sixteen-byte granules.  A flat 4-bit tag array costs
128 bytes per page; the run-length tree usually costs far less and can
hold 8/16/32-bit tags in the same budget, falling back to the flat
array only when a page becomes too fragmented.
"""

from tagmem import PageTagStore, tag_width

# a freshly mapped page is one run: every granule tagged 0
page = PageTagStore(4)
print("fresh page:", page.enumerate_runs())
print(f"  space used: {page.space_used()} bytes "
      f"({float(128 / page.space_used()):.1f}x under the flat array)")

# tagging an allocation is a single range write, one run in the tree
page.stg_range(16, 3, 9)      # 48-byte allocation tagged 9
page.stg_range(19, 1, 0)      # ...and its trailing free space stays 0
print("after one allocation:", page.enumerate_runs())

# adjacent runs with equal tags merge automatically
page.stg_range(16, 3, 0)      # free: re-tag with 0 and the runs collapse
print("after freeing it:", page.enumerate_runs())

# per-width layout constants: node size, node budget, run threshold
print("\nwidth  node   max    max")
print("bits   bytes  nodes  runs")
for bits in (4, 8, 16, 32):
    w = tag_width(bits)
    print(f"{bits:4d}   {w.node_size:4d}   {w.max_nodes:4d}   {w.max_runs:4d}")

# a page that fragments past its budget switches to the 4-bit array;
# wider tags keep only their low nibble from then on
page16 = PageTagStore(16)
page16.stg_range(7, 2, 0x00A5)
granule_count = 0
g = 0
while page16.mode == "btree":
    page16.stg(g, (g % 9) + 1)
    g += 2
    granule_count += 1
print(f"\n16-bit page switched to the flat array after {granule_count} "
      f"disjoint writes")
print("tag 0x00A5 at granule 7 now reads", hex(page16.ldg(7)))

# release resets the page to a fresh tree
page16.page_reset()
print("after reset:", page16.mode, page16.enumerate_runs())
