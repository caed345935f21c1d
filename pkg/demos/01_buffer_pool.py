"""One buffer pool for everything.

Every engine in this package registers its memory objects (array tiles, hash
partitions, scratch blocks) with a single capacity-bounded LRU pool instead
of carving out private caches. This walks the core behaviours: recency-based
eviction, pinning via the is_evictable callback, and per-owner quotas that
simulate physically split pools.

Run with:  python3 demos/01_buffer_pool.py
"""

from multimodel import BufferObject, BufferPool

spilled = []


def obj(oid, size, owner="demo", pinned=lambda: False):
    return BufferObject(oid, size, owner=owner,
                        is_evictable=lambda: not pinned(),
                        do_eviction=lambda: spilled.append(oid))


# -- LRU eviction -------------------------------------------------------------

pool = BufferPool(capacity=1000)
pool.add(obj("a", 400))
pool.add(obj("b", 400))
pool.get("a")                      # refresh "a": now "b" is least recent
pool.add(obj("c", 400))            # needs 200 bytes -> evicts "b"
print("resident after adding c:", sorted(pool.resident_ids()))
print("evicted so far:         ", spilled)

# -- pinning ------------------------------------------------------------------

hold = {"on": True}
pool.add(obj("d", 400, pinned=lambda: hold["on"]))   # evicts "a" to fit
pool.add(obj("e", 400))            # "c" goes; "d" is pinned and skipped
print("pinned d survives:      ", sorted(pool.resident_ids()))
hold["on"] = False
pool.add(obj("f", 900))            # now everything else must go
print("after unpinning:        ", sorted(pool.resident_ids()))

s = pool.stats()
print(f"stats: hits={s.hits} misses={s.misses} evictions={s.evictions}")

# -- unified vs split ---------------------------------------------------------
# The same mixed workload, run once against a shared pool and once against
# per-owner quotas. The split pool evicts even though total demand fits.

workload = [("rel", f"r{i}", 120) for i in range(6)] + \
           [("arr", f"a{i}", 120) for i in range(2)]

for label, quotas in [("unified", None), ("split", {"rel": 500, "arr": 500})]:
    p = BufferPool(1000, quotas=quotas)
    for owner, oid, size in workload:
        p.add(BufferObject(oid, size, owner=owner))
    print(f"{label:>7}: evictions={p.stats().evictions} "
          f"resident={p.stats().resident_bytes}B of 1000B")
