"""Inter-model operations: conversions and relation/collection-to-array joins.

The centerpiece is the multi-stage hash join (``mshj``): records are
re-ordered to match the array's tiling through D stable bucketing stages
(one per dimension, bucket index ``floor(v_d / TS_d)``), then probed in
bucket order so that every referenced tile is pinned exactly once.  Two
baselines share the same emit path: ``join_probe_only`` skips the bucketing
and probes in input order, ``join_via_conversion`` turns the array into a
relation and runs a plain relational join.
"""

from __future__ import annotations

import numbers
import time
from dataclasses import dataclass, field

import numpy as np

from .array_store import ArrayBuilder, StoredArray, TileWriter, dtype_for
from .errors import (BindingError, OutputSpecError, PathError,
                     TypeMismatchError)
from .models import (ABSENT, BOOL, FLOAT, INT, STRING, UINT, ArrayMeta,
                     CellSchema, Collection, Relation, ValueType, dot_get)
from .predicates import equi_conjuncts
from .rd_engine import execute_tree, node


@dataclass(frozen=True)
class DimBinding:
    """Record attributes (or dotted paths), one per array dimension, in
    dimension order."""

    attrs: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.attrs)) != len(self.attrs):
            raise BindingError(f"duplicate binding attributes {self.attrs}")


@dataclass(frozen=True)
class JoinOutputSpec:
    """Target model plus an optional projection over the combined columns
    (record columns first, then array value attributes)."""

    model: str = "relational"  # relational | document | array
    project: tuple[str, ...] | None = None
    name: str = ""
    layout: str | None = None  # array output only; defaults to the input's

    def __post_init__(self):
        if self.model not in ("relational", "document", "array"):
            raise OutputSpecError(f"unknown output model {self.model!r}")


@dataclass
class JoinStats:
    strategy: str = ""
    n_records: int = 0
    block_scans: int = 0
    tile_pins: int = 0
    output_rows: int = 0
    build_seconds: float = 0.0
    probe_seconds: float = 0.0
    convert_seconds: float = 0.0


@dataclass
class JoinTrace:
    """Step-by-step record of one join run, for inspection and tests."""

    stage_buckets: list = field(default_factory=list)  # per stage: bucket -> record idx
    probe_order: list = field(default_factory=list)    # original record indices
    tcs: list = field(default_factory=list)            # tile coords, probe order
    ccs: list = field(default_factory=list)            # cell coords, probe order
    pins: list = field(default_factory=list)           # tile pin sequence
    emits: list = field(default_factory=list)          # record indices with a match


# ---------------------------------------------------------------------------
# dimension extraction

def _is_uint(v) -> bool:
    return isinstance(v, numbers.Integral) and not isinstance(v, bool) and v >= 0


def _extract_dims(records, binding: DimBinding):
    """Pull bound dimension values into an (N, d) int64 matrix.

    Returns (dims, kept) where kept maps matrix rows back to record indices;
    documents missing a bound path are dropped (inner join), anything
    non-integer or negative is a binding error.
    """
    if isinstance(records, Relation):
        idx = []
        for a in binding.attrs:
            try:
                idx.append(records.attr_index(a))
            except KeyError:
                raise BindingError(f"relation has no attribute {a!r}") from None
        n = len(records.rows)
        dims = np.empty((n, len(idx)), dtype=np.int64)
        for j, i in enumerate(idx):
            col = [row[i] for row in records.rows]
            for r, v in enumerate(col):
                if not _is_uint(v):
                    raise BindingError(
                        f"row {r}: dimension attribute {binding.attrs[j]!r} "
                        f"must be a non-negative integer, got {v!r}")
            dims[:, j] = col
        return dims, np.arange(n, dtype=np.int64)

    kept, vals = [], []
    for r, doc in enumerate(records.docs):
        row = []
        for path in binding.attrs:
            v = dot_get(doc, path)
            if v is ABSENT:
                break
            if not _is_uint(v):
                raise BindingError(
                    f"document {r}: path {path!r} must be a non-negative "
                    f"integer, got {v!r}")
            row.append(v)
        else:
            kept.append(r)
            vals.append(row)
    dims = np.asarray(vals, dtype=np.int64).reshape(len(kept), len(binding.attrs))
    return dims, np.asarray(kept, dtype=np.int64)


# ---------------------------------------------------------------------------
# output assembly

def _dedupe(names: list[str], taken: set[str]) -> list[str]:
    out = []
    for n in names:
        while n in taken:
            n = n + "_r"
        taken.add(n)
        out.append(n)
    return out


class _Emitter:
    """Accumulates matched (record, cell) pairs and materializes the
    requested output model."""

    def __init__(self, records, arr: StoredArray, binding: DimBinding,
                 out: JoinOutputSpec, trace: JoinTrace | None):
        self.records = records
        self.arr = arr
        self.binding = binding
        self.out = out
        self.trace = trace
        self.schema = arr.meta.schema
        self.matched_idx: list[np.ndarray] = []
        self.matched_coords: list[np.ndarray] = []
        self.matched_vals: list[list[np.ndarray]] = []
        self.count = 0
        if isinstance(records, Relation):
            taken = set(records.attr_names)
            self.attr_out_names = _dedupe(list(self.schema.attr_names), taken)
        else:
            self.attr_out_names = list(self.schema.attr_names)
        self._writer = None
        if out.model == "array":
            self._prepare_array_output()

    # -- column bookkeeping ------------------------------------------------

    def _combined_names(self) -> list[str]:
        if isinstance(self.records, Relation):
            return self.records.attr_names + self.attr_out_names
        raise OutputSpecError(
            "array output from a document join needs a projection of paths")

    def _prepare_array_output(self):
        names = self._combined_names()
        project = list(self.out.project) if self.out.project is not None else names
        unknown = [p for p in project if p not in names]
        if unknown:
            raise OutputSpecError(f"projected columns {unknown} not in join output")
        missing = [a for a in self.binding.attrs if a not in project]
        if missing:
            raise OutputSpecError(
                f"array output requires every dimension binding projected; "
                f"missing {missing}")
        self._out_attrs = [p for p in project if p not in self.binding.attrs]
        types = []
        for p in self._out_attrs:
            if p in self.schema.attr_names:
                types.append(self.schema.attr_types[self.schema.attr_names.index(p)])
            else:
                rel = self.records
                types.append(rel.schema[rel.attr_index(p)][1])
        for t in types:
            dtype_for(t)  # strings etc. cannot live in an array
        meta = ArrayMeta(
            CellSchema(tuple(self.binding.attrs), tuple(self._out_attrs),
                       tuple(types)),
            self.arr.meta.size, self.arr.meta.tile_size,
            self.out.layout or self.arr.meta.layout)
        self._out_array = StoredArray(meta, self.arr.pool,
                                      name=self.out.name or "joined")
        self._writer = TileWriter(self._out_array)
        # per output attr: how to source its column from a matched run
        rel = self.records
        self._out_sources = []
        for p in self._out_attrs:
            if p in self.attr_out_names:
                self._out_sources.append(("cell", self.attr_out_names.index(p)))
            else:
                col = np.asarray([row[rel.attr_index(p)] for row in rel.rows])
                self._out_sources.append(("rec", col))

    # -- per-run emission ----------------------------------------------------

    def run(self, tc, rec_idx: np.ndarray, cc: np.ndarray,
            found: np.ndarray, vals: list[np.ndarray]) -> None:
        hit_idx = rec_idx[found]
        if self.trace is not None:
            self.trace.emits.extend(int(i) for i in hit_idx)
        if len(hit_idx) == 0:
            return
        self.count += len(hit_idx)
        cc_hit = cc[found]
        if self._writer is not None:
            cols = []
            for kind, src in self._out_sources:
                cols.append(vals[src][found] if kind == "cell" else src[hit_idx])
            self._writer.put_run(tc, cc_hit, cols)
            return
        self.matched_idx.append(hit_idx)
        coords = cc_hit.astype(np.int64) + \
            np.asarray(tc, dtype=np.int64) * np.asarray(self.arr.meta.tile_size,
                                                        dtype=np.int64)
        self.matched_coords.append(coords)
        self.matched_vals.append([v[found] for v in vals])

    # -- finalization --------------------------------------------------------

    def finish(self):
        out = self.out
        if self._writer is not None:
            self._writer.close()
            return self._out_array
        idx = np.concatenate(self.matched_idx) if self.matched_idx else \
            np.zeros(0, dtype=np.int64)
        vals = [np.concatenate(parts) for parts in zip(*self.matched_vals)] \
            if self.matched_vals else [[] for _ in self.schema.attr_names]
        if isinstance(self.records, Relation):
            schema = list(self.records.schema) + [
                (n, t) for n, t in zip(self.attr_out_names, self.schema.attr_types)]
            rows = [self.records.rows[i] + tuple(v[k].item() for v in vals)
                    for k, i in enumerate(idx)]
            rel = Relation(schema, rows)
            rel = _project_relation(rel, out.project)
            if out.model == "relational":
                return rel
            if out.model == "document":
                return Collection(out.name or "joined",
                                  [dict(zip(rel.attr_names, r)) for r in rel.rows])
            raise OutputSpecError(f"cannot emit {out.model} output here")
        # document records: merge keeps the record's value on key collisions
        coords = np.concatenate(self.matched_coords) if self.matched_coords \
            else np.zeros((0, self.schema.d), dtype=np.int64)
        docs = []
        for k, i in enumerate(idx):
            merged = dict(self.records.docs[i])
            for j, dn in enumerate(self.schema.dim_names):
                merged.setdefault(dn, int(coords[k, j]))
            for v, an in zip(vals, self.schema.attr_names):
                merged.setdefault(an, v[k].item())
            docs.append(merged)
        col = Collection(out.name or "joined", docs)
        if out.model == "document":
            return col
        if out.model == "relational":
            if out.project is None:
                raise OutputSpecError(
                    "relational output from a document join needs projected paths")
            return to_relation_from_collection(col, out.project)
        raise OutputSpecError(f"cannot emit {out.model} output here")


def _project_relation(rel: Relation, project) -> Relation:
    if project is None:
        return rel
    idx = []
    for p in project:
        try:
            idx.append(rel.attr_index(p))
        except KeyError:
            raise OutputSpecError(f"projected column {p!r} not in join output") \
                from None
    return Relation([rel.schema[i] for i in idx],
                    [tuple(r[i] for i in idx) for r in rel.rows])


# ---------------------------------------------------------------------------
# the join strategies

def _probe(arr: StoredArray, dims: np.ndarray, kept: np.ndarray,
           order: np.ndarray, emitter: _Emitter, stats: JoinStats,
           trace: JoinTrace | None) -> None:
    """Scan records in `order`, pinning each tile once per contiguous run."""
    ts = np.asarray(arr.meta.tile_size, dtype=np.int64)
    tcs = dims[order] // ts
    ccs = dims[order] % ts
    rec = kept[order]
    if trace is not None:
        trace.probe_order.extend(int(i) for i in rec)
        trace.tcs.extend(tuple(int(x) for x in t) for t in tcs)
        trace.ccs.extend(tuple(int(x) for x in c) for c in ccs)
    stats.block_scans += 1
    if len(order) == 0:
        return
    change = np.flatnonzero((tcs[1:] != tcs[:-1]).any(axis=1)) + 1
    bounds = np.concatenate(([0], change, [len(order)]))
    for i in range(len(bounds) - 1):
        lo, hi = int(bounds[i]), int(bounds[i + 1])
        tc = tuple(int(x) for x in tcs[lo])
        tile = arr.pin(tc)
        stats.tile_pins += 1
        if trace is not None:
            trace.pins.append(tc)
        cc = ccs[lo:hi].astype(np.uint64)
        found, vals = tile.lookup(cc)
        arr.unpin(tc)
        emitter.run(tc, rec[lo:hi], cc, found, vals)


def _drop_out_of_range(dims, kept, size):
    ok = (dims < np.asarray(size, dtype=np.int64)).all(axis=1)
    return dims[ok], kept[ok]


def _default_out(records, out):
    if out is not None:
        return out
    model = "document" if isinstance(records, Collection) else "relational"
    return JoinOutputSpec(model)


def mshj(records, arr: StoredArray, binding: DimBinding,
         out: JoinOutputSpec | None = None, *,
         stats: JoinStats | None = None, trace: JoinTrace | None = None):
    """Multi-stage hash join: D bucketing stages, then a tile-ordered probe.

    Each stage stably re-orders records by ``floor(v_d / TS_d)``; after the
    last stage the scan order is grouped by tile, so the probe pins every
    referenced tile exactly once.  Records outside the array extent or
    probing an absent cell produce no output.
    """
    out = _default_out(records, out)
    stats = stats if stats is not None else JoinStats()
    stats.strategy = "mshj"
    _check_binding(arr, binding)
    dims, kept = _extract_dims(records, binding)
    stats.n_records = len(dims)
    dims, kept = _drop_out_of_range(dims, kept, arr.meta.size)

    t0 = time.perf_counter()
    ts = np.asarray(arr.meta.tile_size, dtype=np.int64)
    grid = arr.meta.grid
    order = np.arange(len(dims), dtype=np.int64)
    for d in range(arr.meta.d):
        keys = dims[order, d] // ts[d]
        order = order[np.argsort(keys, kind="stable")]
        stats.block_scans += 1
        if trace is not None:
            buckets = [[] for _ in range(grid[d])]
            for i in order:
                buckets[int(dims[i, d] // ts[d])].append(int(kept[i]))
            trace.stage_buckets.append(buckets)
    stats.build_seconds += time.perf_counter() - t0

    emitter = _Emitter(records, arr, binding, out, trace)
    t0 = time.perf_counter()
    _probe(arr, dims, kept, order, emitter, stats, trace)
    result = emitter.finish()
    stats.probe_seconds += time.perf_counter() - t0
    stats.output_rows = emitter.count
    return result


def join_probe_only(records, arr: StoredArray, binding: DimBinding,
                    out: JoinOutputSpec | None = None, *,
                    stats: JoinStats | None = None,
                    trace: JoinTrace | None = None):
    """Baseline: identical probe, but in input record order (no bucketing).
    A tile is still pinned once per contiguous run, so scattered orders pin
    the same tile repeatedly."""
    out = _default_out(records, out)
    stats = stats if stats is not None else JoinStats()
    stats.strategy = "probe-only"
    _check_binding(arr, binding)
    dims, kept = _extract_dims(records, binding)
    stats.n_records = len(dims)
    dims, kept = _drop_out_of_range(dims, kept, arr.meta.size)

    if out.model == "array":
        # scattered probes may revisit a tile; collect and build at the end
        collect = JoinOutputSpec("relational", None, out.name)
        emitter = _Emitter(records, arr, binding, collect, trace)
        t0 = time.perf_counter()
        _probe(arr, dims, kept, np.arange(len(dims)), emitter, stats, trace)
        rel = emitter.finish()
        stats.probe_seconds += time.perf_counter() - t0
        stats.output_rows = emitter.count
        spec = JoinOutputSpec("array", out.project, out.name, out.layout)
        return _relation_rows_to_array(rel, arr, binding, spec)
    emitter = _Emitter(records, arr, binding, out, trace)
    t0 = time.perf_counter()
    _probe(arr, dims, kept, np.arange(len(dims)), emitter, stats, trace)
    result = emitter.finish()
    stats.probe_seconds += time.perf_counter() - t0
    stats.output_rows = emitter.count
    return result


def _relation_rows_to_array(rel: Relation, arr: StoredArray,
                            binding: DimBinding, out: JoinOutputSpec):
    names = rel.attr_names
    project = list(out.project) if out.project is not None else names
    missing = [a for a in binding.attrs if a not in project]
    if missing:
        raise OutputSpecError(
            f"array output requires every dimension binding projected; "
            f"missing {missing}")
    value_names = [p for p in project if p not in binding.attrs]
    types = [rel.schema[rel.attr_index(p)][1] for p in value_names]
    meta = ArrayMeta(CellSchema(tuple(binding.attrs), tuple(value_names),
                                tuple(types)),
                     arr.meta.size, arr.meta.tile_size,
                     out.layout or arr.meta.layout)
    return to_array(rel, list(binding.attrs), value_names, meta, arr.pool,
                    name=out.name or "joined")


def join_via_conversion(records, arr: StoredArray, binding: DimBinding | None,
                        out: JoinOutputSpec | None = None, *,
                        pred=None, rec_name: str = "rec", arr_name: str = "arr",
                        stats: JoinStats | None = None):
    """Baseline: array → relation, then an ordinary relational/document join.

    `pred` may be any predicate over the two inputs (qualified by `rec_name`
    / `arr_name`); when omitted it is derived from `binding` as an equi-join
    on every dimension.
    """
    out = _default_out(records, out)
    stats = stats if stats is not None else JoinStats()
    stats.strategy = "convert"
    if pred is None:
        if binding is None:
            raise BindingError("conversion join needs a binding or a predicate")
        from .predicates import parse_predicate
        parts = [f"{rec_name}.{a} = {arr_name}.{d}"
                 for a, d in zip(binding.attrs, arr.meta.schema.dim_names)]
        pred = parse_predicate(" and ".join(parts))
    stats.n_records = len(records.rows) if isinstance(records, Relation) \
        else len(records.docs)

    t0 = time.perf_counter()
    arel = to_relation(arr)
    stats.convert_seconds += time.perf_counter() - t0

    t0 = time.perf_counter()
    tree = node("join",
                node("scan", name="__rec", qualifier=rec_name),
                node("scan", name="__arr", qualifier=arr_name),
                pred=pred)
    schema = arr.meta.schema
    if isinstance(records, Relation):
        taken = set(records.attr_names)
        attr_out = _dedupe(list(schema.attr_names), taken)
        cols = [f"{rec_name}.{c}" for c in records.attr_names] + \
               [f"{arr_name}.{a}" for a in schema.attr_names]
        tree = node("project", tree, cols=cols,
                    names=records.attr_names + attr_out)
    joined = execute_tree(tree, {"__rec": records, "__arr": arel})
    stats.probe_seconds += time.perf_counter() - t0

    if isinstance(joined, Relation):
        stats.output_rows = len(joined.rows)
        if out.model == "array":
            if binding is None:
                raise OutputSpecError("array output needs a dimension binding")
            t0 = time.perf_counter()
            result = _relation_rows_to_array(joined, arr, binding, out)
            stats.convert_seconds += time.perf_counter() - t0
            return result
        joined = _project_relation(joined, out.project)
        if out.model == "document":
            return Collection(out.name or "joined",
                              [dict(zip(joined.attr_names, r))
                               for r in joined.rows])
        return joined
    stats.output_rows = len(joined.docs)
    if out.model == "document":
        return joined
    if out.model == "relational":
        if out.project is None:
            raise OutputSpecError(
                "relational output from a document join needs projected paths")
        return to_relation_from_collection(joined, out.project)
    raise OutputSpecError("array output from a document conversion join is "
                          "not supported; bind dimensions and use mshj")


def _check_binding(arr: StoredArray, binding: DimBinding) -> None:
    if len(binding.attrs) != arr.meta.d:
        raise BindingError(
            f"binding has {len(binding.attrs)} attributes for a "
            f"{arr.meta.d}-dimensional array")


# ---------------------------------------------------------------------------
# dispatcher

def match_all_dims_binding(pred, arr: StoredArray, rec_name: str,
                           arr_name: str) -> DimBinding | None:
    """If `pred` is a pure equi-join binding every array dimension exactly
    once, return the record-side binding (in dimension order); else None."""
    pairs, residual = equi_conjuncts(pred)
    if residual is not None or not pairs:
        return None
    dim_names = arr.meta.schema.dim_names
    bound: dict[str, str] = {}

    def split(ref: str):
        if "." in ref:
            q, _, tail = ref.partition(".")
            return q, tail
        return None, ref

    for a, b in pairs:
        qa, ta = split(a)
        qb, tb = split(b)
        a_is_dim = qa == arr_name and ta in dim_names
        b_is_dim = qb == arr_name and tb in dim_names
        if a_is_dim == b_is_dim:
            return None  # dim=dim or rec=rec: not an all-dims binding
        dim, rec = (ta, b) if a_is_dim else (tb, a)
        q, tail = split(rec)
        if q == arr_name or dim in bound:
            return None
        bound[dim] = tail if q in (None, rec_name) else rec
    if set(bound) != set(dim_names):
        return None
    return DimBinding(tuple(bound[d] for d in dim_names))


def dispatch_join(records, arr: StoredArray, pred,
                  out: JoinOutputSpec | None = None, *,
                  rec_name: str = "rec", arr_name: str = "arr",
                  strategy: str = "auto", stats: JoinStats | None = None,
                  trace: JoinTrace | None = None):
    """Route an inter-model join: all-dimension equi-joins go to mshj, any
    other predicate falls back to the conversion strategy."""
    out = _default_out(records, out)
    binding = match_all_dims_binding(pred, arr, rec_name, arr_name)
    if strategy == "auto":
        strategy = "mshj" if binding is not None else "convert"
    if strategy in ("mshj", "probe-only") and binding is None:
        raise BindingError(
            "mshj requires an equi-join over every array dimension")
    if strategy == "mshj":
        return mshj(records, arr, binding, out, stats=stats, trace=trace)
    if strategy == "probe-only":
        return join_probe_only(records, arr, binding, out, stats=stats,
                               trace=trace)
    if strategy == "convert":
        return join_via_conversion(records, arr, binding, out, pred=pred,
                                   rec_name=rec_name, arr_name=arr_name,
                                   stats=stats)
    raise OutputSpecError(f"unknown join strategy {strategy!r}")


# ---------------------------------------------------------------------------
# model conversions

def to_array(src, dim_names: list[str], value_names: list[str],
             meta: ArrayMeta, pool, *, name: str = "",
             spool_dir: str | None = None) -> StoredArray:
    """One cell per record at the bound coordinates.  Coordinates must be
    unique unsigned integers inside meta.size."""
    if len(dim_names) != meta.d or len(value_names) != len(meta.schema.attr_names):
        raise OutputSpecError("dim/value name count does not match the array schema")
    binding = DimBinding(tuple(dim_names))
    dims, kept = _extract_dims(src, binding)
    builder = ArrayBuilder(meta, pool, name=name, spool_dir=spool_dir)
    if isinstance(src, Relation):
        cols = []
        for vn in value_names:
            try:
                i = src.attr_index(vn)
            except KeyError:
                raise BindingError(f"relation has no attribute {vn!r}") from None
            cols.append(np.asarray([row[i] for row in src.rows]))
        cols = [c[kept] for c in cols]
    else:
        cols = []
        for vn in value_names:
            vals = []
            for r in kept:
                v = dot_get(src.docs[int(r)], vn)
                if v is ABSENT:
                    raise PathError(f"document {int(r)} lacks value path {vn!r}")
                vals.append(v)
            cols.append(np.asarray(vals))
    builder.add_cells(dims, cols)
    return builder.finish()


def to_relation(arr: StoredArray) -> Relation:
    """All cells as rows: dimension columns (unsigned) then value attributes,
    tile-major order."""
    schema = [(n, UINT) for n in arr.meta.schema.dim_names] + \
        list(zip(arr.meta.schema.attr_names, arr.meta.schema.attr_types))
    rows = []
    for coords, vals in arr.iter_cells():
        coord_cols = coords.tolist()
        val_cols = [v.tolist() for v in vals]
        for k in range(len(coord_cols)):
            rows.append(tuple(coord_cols[k]) + tuple(c[k] for c in val_cols))
    return Relation(schema, rows)


def _infer_column_type(values) -> ValueType:
    kinds = set()
    for v in values:
        if v is None:
            continue
        if isinstance(v, bool):
            kinds.add("bool")
        elif isinstance(v, numbers.Integral):
            kinds.add("int")
        elif isinstance(v, numbers.Real):
            kinds.add("float")
        elif isinstance(v, str):
            kinds.add("string")
        elif isinstance(v, list):
            kinds.add("list")
        else:
            kinds.add("doc")
    if kinds == {"int"}:
        return INT
    if kinds <= {"int", "float"} and kinds:
        return FLOAT
    if kinds == {"bool"}:
        return BOOL
    if kinds == {"list"}:
        return ValueType("list")
    if kinds == {"doc"}:
        return ValueType("doc")
    return STRING


def to_relation_from_collection(col: Collection, paths, *,
                                null_fill: bool = False) -> Relation:
    """Flatten documents over the given dotted paths, one column per path."""
    rows = []
    cols: list[list] = [[] for _ in paths]
    for r, doc in enumerate(col.docs):
        row = []
        for j, p in enumerate(paths):
            v = dot_get(doc, p)
            if v is ABSENT:
                if not null_fill:
                    raise PathError(f"document {r} lacks required path {p!r}")
                v = None
            row.append(v)
            cols[j].append(v)
        rows.append(tuple(row))
    schema = [(p, _infer_column_type(c)) for p, c in zip(paths, cols)]
    return Relation(schema, rows)


def to_collection(src, name: str = "") -> Collection:
    """Relation or array to documents, one per row/cell."""
    if isinstance(src, StoredArray):
        src = to_relation(src)
    if isinstance(src, Collection):
        return src
    names = src.attr_names
    return Collection(name or "converted",
                      [dict(zip(names, row)) for row in src.rows])
