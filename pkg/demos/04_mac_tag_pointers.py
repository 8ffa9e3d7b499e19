"""Pointer MACs on top of the run store.

Instead of wasting pointer bits on separate integrity and tag fields,
each allocation's pointer carries a 16-bit MAC over (memory tag,
allocation start).  The run store already knows both, so verification
is one lookup plus one MAC.  Forging a usable pointer means guessing
16 bits; once a page has fallen back to the 4-bit array the scheme
degrades to plain 4-bit tagging for that page.
"""

import random

from tagmem import PageTagStore
from tagmem.pacmte import PacHeap, PacKey

key = PacKey.from_hex("00112233445566778899aabbccddeeff")
heap = PacHeap(key, PageTagStore(16), random.Random(1),
               page_base=0x40000000)

a, tp_a = heap.alloc(0x40000000 + 0x100, 160)
b, tp_b = heap.alloc(0x40000000 + 0x400, 96)
print(f"allocation a at {a:#x}, pointer MAC {tp_a:#06x}")
print(f"allocation b at {b:#x}, pointer MAC {tp_b:#06x}")
print("a's pointer verifies on a:", heap.verify(a + 64, tp_a))
print("a's pointer on b (overflow probe):", heap.verify(b, tp_a))

heap.free(a)
print("a's pointer after free (dangling):", heap.verify(a, tp_a))

# guessing: acceptance of random 16-bit forgeries is ~1/65536
rng = random.Random(9)
n = 200_000
hits = sum(heap.verify(b, rng.getrandbits(16)) for _ in range(n))
print(f"random forgeries accepted: {hits}/{n} (~2^-16 expected)")

# after the page's fallback only four bits protect it (~1/16)
heap.store.switch_to_array()
c, tp_c = heap.alloc(0x40000000 + 0x800, 64)
hits = sum(heap.verify(c, rng.getrandbits(16)) for _ in range(20_000))
print(f"post-fallback forgeries accepted: {hits}/20000 (~1/16 expected)")
print("legitimate pointer still verifies:", heap.verify(c, tp_c))
