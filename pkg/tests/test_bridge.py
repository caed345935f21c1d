import random
from collections import Counter

import numpy as np
import pytest

from multimodel.array_store import ArrayBuilder
from multimodel.bridge import (DimBinding, JoinOutputSpec, JoinStats,
                               JoinTrace, dispatch_join, join_probe_only,
                               join_via_conversion, match_all_dims_binding,
                               mshj, to_array, to_collection, to_relation,
                               to_relation_from_collection)
from multimodel.errors import (BindingError, BoundsError, DuplicateCellError,
                               OutputSpecError, PathError)
from multimodel.models import (ABSENT, BOOL, FLOAT, INT, UINT, ArrayMeta,
                               CellSchema, Collection, Relation, dot_get)
from multimodel.predicates import parse_predicate


def build_array(pool, size, tile_size, cells, layout="dense",
                dims=("d0", "d1"), attrs=(("val", FLOAT),)):
    """cells: {coords: (attr values...)}"""
    meta = ArrayMeta(CellSchema(tuple(dims)[: len(size)],
                                tuple(n for n, _ in attrs),
                                tuple(t for _, t in attrs)),
                     size, tile_size, layout)
    b = ArrayBuilder(meta, pool)
    coords = list(cells)
    cols = list(zip(*(cells[c] for c in coords))) if coords else \
        [[] for _ in attrs]
    b.add_cells(np.asarray(coords, dtype=np.int64).reshape(-1, len(size)), cols)
    return b.finish()


def cells_of(arr):
    out = {}
    for coords, vals in arr.iter_cells():
        for k in range(len(coords)):
            out[tuple(int(x) for x in coords[k])] = \
                tuple(v[k].item() for v in vals)
    return out


def nested_loop_oracle(rel, attrs, arr):
    cells = cells_of(arr)
    idx = [rel.attr_index(a) for a in attrs]
    return [row + cells[tuple(row[i] for i in idx)]
            for row in rel.rows if tuple(row[i] for i in idx) in cells]


def multiset(rows):
    return Counter(map(repr, rows))


# ----------------------------------------------------------- worked example
# five records against a 30x10 array tiled 10x5

FIVE = Relation([("v0", INT), ("v1", INT), ("tag", INT)],
                [(23, 8, 0), (5, 2, 1), (15, 1, 2), (7, 4, 3), (12, 3, 4)])


@pytest.fixture
def small_array(pool):
    # cells exist at three of the five record coordinates
    return build_array(pool, (30, 10), (10, 5),
                       {(23, 8): (1.5,), (5, 2): (2.5,), (15, 1): (3.5,)})


def test_building_stages_bucket_by_tile_extent(pool, small_array):
    trace = JoinTrace()
    mshj(FIVE, small_array, DimBinding(("v0", "v1")), trace=trace)
    # stage 0: floor(v0/10) -> 3 buckets; record 0 (v0=23) lands in bucket 2
    assert trace.stage_buckets[0] == [[1, 3], [2, 4], [0]]
    # stage 1: floor(v1/5) -> 2 buckets, previous order preserved
    assert trace.stage_buckets[1] == [[1, 3, 2, 4], [0]]
    assert trace.probe_order == [1, 3, 2, 4, 0]


def test_probe_coordinates_and_single_pins(pool, small_array):
    trace = JoinTrace()
    stats = JoinStats()
    out = mshj(FIVE, small_array, DimBinding(("v0", "v1")),
               stats=stats, trace=trace)
    assert trace.tcs == [(0, 0), (0, 0), (1, 0), (1, 0), (2, 1)]
    assert trace.ccs == [(5, 2), (7, 4), (5, 1), (2, 3), (3, 3)]
    # last probed record is (23, 8): tile (2,1), cell (3,3)
    assert trace.tcs[-1] == (2, 1) and trace.ccs[-1] == (3, 3)
    assert trace.pins == [(0, 0), (1, 0), (2, 1)]
    assert all(n == 1 for n in small_array.pin_counts.values())
    assert set(small_array.pin_counts) == {(0, 0), (1, 0), (2, 1)}
    assert stats.tile_pins == 3
    # only the records whose cell exists are emitted
    assert multiset(out.rows) == multiset([
        (5, 2, 1, 2.5), (15, 1, 2, 3.5), (23, 8, 0, 1.5)])
    assert out.schema == [("v0", INT), ("v1", INT), ("tag", INT),
                          ("val", FLOAT)]


def test_block_scans_are_dims_plus_one(pool, small_array):
    stats = JoinStats()
    mshj(FIVE, small_array, DimBinding(("v0", "v1")), stats=stats)
    assert stats.block_scans == 3  # 2 building stages + 1 probe pass

    stats = JoinStats()
    join_probe_only(FIVE, small_array, DimBinding(("v0", "v1")), stats=stats)
    assert stats.block_scans == 1


def test_probe_only_in_reversed_order_pins_more(pool, small_array):
    stats = JoinStats()
    mshj(FIVE, small_array, DimBinding(("v0", "v1")), stats=stats)
    base = stats.tile_pins

    small_array.pin_counts.clear()
    stats2 = JoinStats()
    shuffled = Relation(FIVE.schema, [FIVE.rows[i] for i in (0, 1, 2, 3, 4)])
    # input order revisits tiles: (2,1),(0,0),(1,0),(0,0),(1,0)
    shuffled = Relation(FIVE.schema, [FIVE.rows[i] for i in (0, 1, 2, 3, 4)])
    join_probe_only(shuffled, small_array, DimBinding(("v0", "v1")),
                    stats=stats2)
    assert stats2.tile_pins == 5 > base


def test_probe_only_on_presorted_records_matches_mshj_pins(pool, small_array):
    trace = JoinTrace()
    stats = JoinStats()
    mshj(FIVE, small_array, DimBinding(("v0", "v1")),
         stats=stats, trace=trace)
    presorted = Relation(FIVE.schema, [FIVE.rows[i] for i in trace.probe_order])
    stats2 = JoinStats()
    out = join_probe_only(presorted, small_array, DimBinding(("v0", "v1")),
                          stats=stats2)
    assert stats2.tile_pins == stats.tile_pins
    assert len(out.rows) == 3


def test_empty_relation_gives_empty_output(pool, small_array):
    empty = Relation(FIVE.schema, [])
    out = mshj(empty, small_array, DimBinding(("v0", "v1")))
    assert out.rows == [] and out.schema[:3] == FIVE.schema

    arr_out = mshj(empty, small_array, DimBinding(("v0", "v1")),
                   JoinOutputSpec("array"))
    assert arr_out.cell_count() == 0

    col_out = mshj(Collection("c", []), small_array,
                   DimBinding(("v0", "v1")), JoinOutputSpec("document"))
    assert col_out.docs == []


def test_binding_errors(pool, small_array):
    bad = Relation([("v0", INT), ("v1", INT)], [(1, -2)])
    with pytest.raises(BindingError):
        mshj(bad, small_array, DimBinding(("v0", "v1")))
    mixed = Relation([("v0", INT), ("v1", INT)], [(1, "x")])
    with pytest.raises(BindingError):
        mshj(mixed, small_array, DimBinding(("v0", "v1")))
    booly = Relation([("v0", INT), ("v1", INT)], [(1, True)])
    with pytest.raises(BindingError):
        mshj(booly, small_array, DimBinding(("v0", "v1")))
    with pytest.raises(BindingError):
        mshj(FIVE, small_array, DimBinding(("v0",)))
    with pytest.raises(BindingError):
        mshj(FIVE, small_array, DimBinding(("v0", "nope")))


def test_out_of_range_records_are_dropped(pool, small_array):
    rel = Relation([("v0", INT), ("v1", INT)], [(5, 2), (99, 2), (5, 77)])
    out = mshj(rel, small_array, DimBinding(("v0", "v1")))
    assert out.rows == [(5, 2, 2.5)]


# ----------------------------------------------------- randomized vs oracle

def _random_instance(pool, rng, d, layout, n_rows=200, out_of_range=True):
    size = tuple(rng.randint(6, 14) for _ in range(d))
    tile = tuple(rng.randint(2, 5) for _ in range(d))
    n_cells = rng.randint(0, min(60, int(np.prod(size))))
    coords = set()
    while len(coords) < n_cells:
        coords.add(tuple(rng.randrange(s) for s in size))
    cells = {c: (round(rng.uniform(0, 9), 3),) for c in coords}
    arr = build_array(pool, size, tile, cells, layout,
                      dims=tuple(f"d{i}" for i in range(d)))
    hi = [s + (3 if out_of_range else 0) for s in size]
    rows = [tuple(rng.randrange(h) for h in hi) + (i,)
            for i in range(n_rows)]
    rel = Relation([(f"a{i}", INT) for i in range(d)] + [("tag", INT)], rows)
    return rel, arr


@pytest.mark.parametrize("layout", ["dense", "coo", "csr"])
def test_mshj_matches_nested_loop_oracle_2d(pool, layout):
    rng = random.Random(hash(layout) % 10_000)
    for trial in range(6):
        rel, arr = _random_instance(pool, rng, 2, layout)
        attrs = ("a0", "a1")
        got = mshj(rel, arr, DimBinding(attrs))
        assert multiset(got.rows) == multiset(nested_loop_oracle(rel, attrs, arr))


@pytest.mark.parametrize("d", [1, 3])
def test_mshj_matches_nested_loop_oracle_other_dims(pool, d):
    rng = random.Random(17 * d)
    for trial in range(5):
        rel, arr = _random_instance(pool, rng, d, "coo")
        attrs = tuple(f"a{i}" for i in range(d))
        got = mshj(rel, arr, DimBinding(attrs))
        assert multiset(got.rows) == multiset(nested_loop_oracle(rel, attrs, arr))


def test_strategies_agree_everywhere(pool):
    rng = random.Random(99)
    for trial in range(5):
        rel, arr = _random_instance(pool, rng, 2, "dense", n_rows=80)
        b = DimBinding(("a0", "a1"))
        r1 = mshj(rel, arr, b)
        r2 = join_probe_only(rel, arr, b)
        r3 = join_via_conversion(rel, arr, b)
        assert multiset(r1.rows) == multiset(r2.rows) == multiset(r3.rows)
        assert r1.schema == r2.schema == r3.schema


def test_probe_order_is_radix_sorted(pool):
    rng = random.Random(4)
    rel, arr = _random_instance(pool, rng, 3, "dense", n_rows=300)
    trace = JoinTrace()
    mshj(rel, arr, DimBinding(("a0", "a1", "a2")), trace=trace)
    keys = [tuple(reversed(tc)) for tc in trace.tcs]
    assert keys == sorted(keys)
    # grouped by tile: each distinct tile forms one contiguous run
    assert len(trace.pins) == len(set(trace.pins))


def test_referenced_tiles_pinned_once_others_never(pool):
    rng = random.Random(12)
    rel, arr = _random_instance(pool, rng, 2, "coo", n_rows=150)
    arr.pin_counts.clear()
    trace = JoinTrace()
    mshj(rel, arr, DimBinding(("a0", "a1")), trace=trace)
    referenced = set(trace.tcs)
    assert set(arr.pin_counts) == referenced
    assert all(c == 1 for c in arr.pin_counts.values())


def test_shuffled_probe_only_reads_exceed_distinct_tiles(pool):
    rng = random.Random(5)
    rel, arr = _random_instance(pool, rng, 2, "dense", n_rows=300,
                                out_of_range=False)
    trace = JoinTrace()
    stats = JoinStats()
    join_probe_only(rel, arr, DimBinding(("a0", "a1")),
                    stats=stats, trace=trace)
    k = len(set(trace.tcs))
    assert stats.tile_pins >= k
    revisits = stats.tile_pins - len(set(trace.pins))
    if revisits:  # random order essentially always revisits
        assert stats.tile_pins > k


# ------------------------------------------------------------- array output

def test_join_to_array_output(pool):
    rng = random.Random(31)
    _, arr = _random_instance(pool, rng, 2, "dense", n_rows=0,
                              out_of_range=False)
    # unique coordinates per record (array output forbids duplicates)
    coords = rng.sample([(i, j) for i in range(arr.meta.size[0])
                         for j in range(arr.meta.size[1])], 40)
    rel = Relation([("a0", INT), ("a1", INT), ("tag", INT)],
                   [c + (k,) for k, c in enumerate(coords)])
    spec = JoinOutputSpec("array", project=("a0", "a1", "tag"))
    out = mshj(rel, arr, DimBinding(("a0", "a1")), spec)
    assert out.meta.schema.dim_names == ("a0", "a1")
    assert out.meta.schema.attr_names == ("tag",)
    oracle = {(r[0], r[1]): (r[2],) for r in
              nested_loop_oracle(rel, ("a0", "a1"), arr)}
    assert cells_of(out) == oracle
    assert out.meta.size == arr.meta.size
    assert out.meta.tile_size == arr.meta.tile_size


def test_array_output_requires_dims_projected(pool, small_array):
    with pytest.raises(OutputSpecError):
        mshj(FIVE, small_array, DimBinding(("v0", "v1")),
             JoinOutputSpec("array", project=("v0", "val")))


def test_array_output_duplicate_coordinates(pool, small_array):
    dup = Relation([("v0", INT), ("v1", INT)], [(5, 2), (5, 2)])
    with pytest.raises(DuplicateCellError):
        mshj(dup, small_array, DimBinding(("v0", "v1")),
             JoinOutputSpec("array"))


def test_attr_name_collision_gets_suffix(pool):
    rel = Relation([("d0", INT), ("d1", INT), ("val", INT)], [(0, 0, 7)])
    arr = build_array(pool, (4, 4), (2, 2), {(0, 0): (1.5,)})
    out = mshj(rel, arr, DimBinding(("d0", "d1")))
    assert [n for n, _ in out.schema] == ["d0", "d1", "val", "val_r"]
    assert out.rows == [(0, 0, 7, 1.5)]


# ---------------------------------------------------------------- documents

DOCS = Collection("m", [
    {"who": {"cid": 0}, "item": {"pid": 1}, "w": 2.0},
    {"who": {"cid": 3}, "item": {"pid": 0}, "w": 4.0},
    {"who": {"cid": 1}},  # no item.pid: dropped
])


def test_document_side_join_merges_cell_into_doc(pool):
    arr = build_array(pool, (4, 4), (2, 2),
                      {(0, 1): (9.5,), (2, 2): (1.0,)},
                      dims=("cid", "pid"), attrs=(("rating", FLOAT),))
    out = mshj(DOCS, arr, DimBinding(("who.cid", "item.pid")))
    assert out.docs == [{"who": {"cid": 0}, "item": {"pid": 1}, "w": 2.0,
                         "cid": 0, "pid": 1, "rating": 9.5}]


def test_document_join_keeps_left_value_on_collision(pool):
    arr = build_array(pool, (4,), (2,), {(1,): (5.5,)},
                      dims=("x",), attrs=(("rating", FLOAT),))
    col = Collection("c", [{"x": 1, "rating": "mine"}])
    out = mshj(col, arr, DimBinding(("x",)))
    assert out.docs == [{"x": 1, "rating": "mine"}]


def test_document_join_strategies_agree(pool):
    arr = build_array(pool, (4, 4), (2, 2),
                      {(0, 1): (9.5,), (3, 0): (2.5,), (1, 1): (4.0,)},
                      dims=("cid", "pid"), attrs=(("rating", FLOAT),))
    flat = Collection("m", [{"cid": i % 4, "pid": (i * 7) % 4, "n": i}
                            for i in range(12)])
    b = DimBinding(("cid", "pid"))
    a = mshj(flat, arr, b)
    c = join_via_conversion(flat, arr, b)
    key = lambda d: sorted(d.items(), key=repr)
    assert sorted(map(key, a.docs)) == sorted(map(key, c.docs))


# --------------------------------------------------------------- dispatcher

def test_dispatch_full_equi_uses_mshj(pool, small_array):
    pred = parse_predicate("r.v0 = a.d0 and r.v1 = a.d1")
    stats = JoinStats()
    out = dispatch_join(FIVE, small_array, pred, rec_name="r", arr_name="a",
                        stats=stats)
    assert stats.strategy == "mshj"
    assert len(out.rows) == 3


def test_dispatch_partial_or_non_equi_converts(pool, small_array):
    stats = JoinStats()
    pred = parse_predicate("r.v0 = a.d0")  # one dimension unbound
    dispatch_join(FIVE, small_array, pred, rec_name="r", arr_name="a",
                  stats=stats)
    assert stats.strategy == "convert"

    stats = JoinStats()
    pred = parse_predicate("r.v0 = a.d0 and r.v1 < a.d1")
    out = dispatch_join(FIVE, small_array, pred, rec_name="r", arr_name="a",
                        stats=stats)
    assert stats.strategy == "convert"
    oracle = [r + c[2:] for r in FIVE.rows
              for c in to_relation(small_array).rows
              if r[0] == c[0] and r[1] < c[1]]
    assert multiset(out.rows) == multiset(oracle)


def test_dispatch_forced_mshj_needs_full_binding(pool, small_array):
    pred = parse_predicate("r.v0 = a.d0")
    with pytest.raises(BindingError):
        dispatch_join(FIVE, small_array, pred, rec_name="r", arr_name="a",
                      strategy="mshj")


def test_match_binding_orders_by_dimension(pool, small_array):
    pred = parse_predicate("a.d1 = r.v1 and r.v0 = a.d0")  # swapped, reversed
    b = match_all_dims_binding(pred, small_array, "r", "a")
    assert b == DimBinding(("v0", "v1"))
    assert match_all_dims_binding(
        parse_predicate("a.d0 = a.d1"), small_array, "r", "a") is None


# -------------------------------------------------------------- conversions

def test_to_array_single_row_and_round_trip(pool):
    rel = Relation([("x", UINT), ("y", UINT), ("v", FLOAT)], [(0, 0, 1.5)])
    meta = ArrayMeta(CellSchema(("x", "y"), ("v",), (FLOAT,)), (4, 4), (2, 2))
    arr = to_array(rel, ["x", "y"], ["v"], meta, pool)
    assert cells_of(arr) == {(0, 0): (1.5,)}
    back = to_relation(arr)
    assert multiset(back.rows) == multiset(rel.rows)
    assert back.schema == [("x", UINT), ("y", UINT), ("v", FLOAT)]


def test_to_array_full_grid(pool):
    rows = [(i, j, float(i * 4 + j)) for i in range(4) for j in range(4)]
    rel = Relation([("x", UINT), ("y", UINT), ("v", FLOAT)], rows)
    meta = ArrayMeta(CellSchema(("x", "y"), ("v",), (FLOAT,)), (4, 4), (2, 2))
    arr = to_array(rel, ["x", "y"], ["v"], meta, pool)
    assert arr.cell_count() == 16
    assert multiset(to_relation(arr).rows) == multiset(rows)


def test_to_array_errors(pool):
    meta = ArrayMeta(CellSchema(("x",), ("v",), (FLOAT,)), (4,), (2,))
    with pytest.raises(BoundsError):
        to_array(Relation([("x", INT), ("v", FLOAT)], [(9, 1.0)]),
                 ["x"], ["v"], meta, pool)
    with pytest.raises(DuplicateCellError):
        to_array(Relation([("x", INT), ("v", FLOAT)], [(1, 1.0), (1, 2.0)]),
                 ["x"], ["v"], meta, pool)
    with pytest.raises(BindingError):
        to_array(Relation([("x", INT), ("v", FLOAT)], [(-1, 1.0)]),
                 ["x"], ["v"], meta, pool)


def test_to_array_membership_oracle(pool):
    rng = random.Random(3)
    coords = rng.sample([(i, j) for i in range(10) for j in range(8)], 30)
    rows = [c + (float(k), k % 2 == 0) for k, c in enumerate(coords)]
    rel = Relation([("i", UINT), ("j", UINT), ("v", FLOAT), ("ok", BOOL)], rows)
    meta = ArrayMeta(CellSchema(("i", "j"), ("v", "ok"),
                                (FLOAT, BOOL)), (10, 8), (3, 3), "coo")
    arr = to_array(rel, ["i", "j"], ["v", "ok"], meta, pool)
    got = cells_of(arr)
    assert got == {c: (float(k), k % 2 == 0) for k, c in enumerate(coords)}


def test_to_relation_empty_array(pool):
    meta = ArrayMeta(CellSchema(("x", "y"), ("v",), (FLOAT,)), (4, 4), (2, 2))
    arr = ArrayBuilder(meta, pool).finish()
    rel = to_relation(arr)
    assert rel.rows == []
    assert rel.schema == [("x", UINT), ("y", UINT), ("v", FLOAT)]


def test_to_relation_is_tile_major(pool):
    cells = {(0, 0): (1.0,), (0, 3): (2.0,), (3, 0): (3.0,), (3, 3): (4.0,)}
    arr = build_array(pool, (4, 4), (2, 2), cells)
    rel = to_relation(arr)
    assert [r[:2] for r in rel.rows] == [(0, 0), (0, 3), (3, 0), (3, 3)]


def test_collection_flattening_matches_walker(pool):
    rng = random.Random(8)
    docs = []
    for i in range(40):
        d = {"id": i, "a": {"b": rng.randrange(5)}}
        if rng.random() < 0.5:
            d["opt"] = rng.random()
        docs.append(d)
    col = Collection("c", docs)
    with pytest.raises(PathError):
        to_relation_from_collection(col, ["id", "a.b", "opt"])
    rel = to_relation_from_collection(col, ["id", "a.b", "opt"],
                                      null_fill=True)
    for row, doc in zip(rel.rows, docs):
        expect = tuple(None if (v := dot_get(doc, p)) is ABSENT else v
                       for p in ("id", "a.b", "opt"))
        assert row == expect
    assert [n for n, _ in rel.schema] == ["id", "a.b", "opt"]


def test_to_collection_round_trip(pool):
    rel = Relation([("x", INT), ("s", INT)], [(1, 2), (3, 4)])
    col = to_collection(rel, "c")
    assert col.docs == [{"x": 1, "s": 2}, {"x": 3, "s": 4}]
    arr = build_array(pool, (4,), (2,), {(1,): (7.25,)}, dims=("x",))
    col2 = to_collection(arr)
    assert col2.docs == [{"x": 1, "val": 7.25}]
