"""Array operators over tiled storage.

Element-wise arithmetic, matrix multiplication, transposition, window and
dimension aggregation, sub-array, array build, deterministic random
initialization, and array-array spatial join. Operators pin tiles through the
buffer pool and unpin before returning; results are new StoredArrays.

Sparse semantics: an absent cell counts as 0 for + - *; division keeps the
divisor's support (absent divisor -> absent output) so missing cells never
manufacture NaNs. Division by a present zero propagates IEEE inf/nan.

Window boundaries clip to the array (no padding), and a window cell exists
iff its neighborhood contains at least one present cell.
"""

from __future__ import annotations

import itertools
import re

import numpy as np

from .array_store import StoredArray, dtype_for, make_tile
from .buffer_pool import BufferPool
from .errors import BoundsError, ShapeError
from .models import ArrayMeta, CellSchema, ValueType

__all__ = [
    "ewise", "matmul", "transpose", "window", "aggregate", "subarray",
    "build", "rand", "spatial_join_array", "to_grid", "from_grid",
]

_AUTO_NAME = re.compile(r"^(dim\d+|value\d*)$")

_AGGS = ("sum", "avg", "min", "max", "count")


def _is_auto(name: str) -> bool:
    return bool(_AUTO_NAME.match(name))


def _merge_name(left: str, right: str) -> str:
    """Explicit names beat auto-generated ones; left wins ties."""
    if _is_auto(left) and not _is_auto(right):
        return right
    return left


def _merge_schema(a: CellSchema, b: CellSchema) -> CellSchema:
    dims = tuple(_merge_name(x, y) for x, y in zip(a.dim_names, b.dim_names))
    attrs = tuple(_merge_name(x, y) for x, y in zip(a.attr_names, b.attr_names))
    if len(set(dims) | set(attrs)) != len(dims) + len(attrs):
        return a  # merged names collide; fall back to the left schema
    return CellSchema(dims, attrs, a.attr_types)


def _fix_layout(layout: str, d: int) -> str:
    return layout if layout != "csr" or d == 2 else "coo"


def _auto_schema(d: int, n_attrs: int = 1,
                 kinds: tuple[str, ...] | None = None) -> CellSchema:
    kinds = kinds or ("float",) * n_attrs
    attr_names = ("value",) if n_attrs == 1 else tuple(f"value{i}" for i in range(n_attrs))
    return CellSchema(tuple(f"dim{i}" for i in range(d)), attr_names,
                      tuple(ValueType(k) for k in kinds))


# ------------------------------------------------------- grid materialization

def to_grid(arr: StoredArray):
    """Materialize the whole array: (presence mask over AS, value grids)."""
    size = arr.meta.size
    mask = np.zeros(size, dtype=bool)
    values = [np.zeros(size, dt) for dt in arr.attr_dtypes]
    ts = arr.meta.tile_size
    for tc in arr.tile_coords():
        tile = arr.pin(tc)
        m, vs = tile.to_scratch()
        sl = tuple(slice(c * t, c * t + v)
                   for c, t, v in zip(tc, ts, arr.valid_extent(tc)))
        box = tuple(slice(0, v) for v in arr.valid_extent(tc))
        mask[sl] = m[box]
        for grid, v in zip(values, vs):
            grid[sl] = v[box]
        arr.unpin(tc)
    return mask, values


def from_grid(meta: ArrayMeta, mask: np.ndarray, values, pool: BufferPool, *,
              name: str = "", spool_dir: str | None = None) -> StoredArray:
    """Tile a full-size grid into a new StoredArray (tile-at-a-time)."""
    arr = StoredArray(meta, pool, name=name, spool_dir=spool_dir)
    ts = meta.tile_size
    for tc in itertools.product(*[range(g) for g in meta.grid]):
        sl = tuple(slice(c * t, c * t + v)
                   for c, t, v in zip(tc, ts, arr.valid_extent(tc)))
        m = mask[sl]
        if not m.any():
            continue
        cc = np.argwhere(m)
        idx = tuple(cc[:, i] for i in range(meta.d))
        cols = [np.ascontiguousarray(v[sl][idx]) for v in values]
        tile = make_tile(tc, ts, arr.valid_extent(tc), arr.attr_dtypes,
                         meta.layout, cc, cols, sort=False)
        arr.write_tile(tc, tile)
    return arr


# --------------------------------------------------------------- element-wise

def ewise(op: str, a: StoredArray, b: StoredArray, *, name: str = "") -> StoredArray:
    if op not in ("+", "-", "*", "/"):
        raise ValueError(f"unknown element-wise operator {op!r}")
    if a.meta.size != b.meta.size or a.meta.tile_size != b.meta.tile_size:
        raise ShapeError(
            f"element-wise operands disagree: {a.meta.size}/{a.meta.tile_size} "
            f"vs {b.meta.size}/{b.meta.tile_size}")
    if len(a.attr_dtypes) != 1 or len(b.attr_dtypes) != 1:
        raise ShapeError("element-wise arithmetic needs single-attribute arrays")
    kind = "float" if op == "/" or "float" in (a.meta.schema.attr_types[0].kind,
                                               b.meta.schema.attr_types[0].kind) else "int"
    sch = _merge_schema(a.meta.schema, b.meta.schema)
    sch = CellSchema(sch.dim_names, sch.attr_names, (ValueType(kind),))
    meta = ArrayMeta(sch, a.meta.size, a.meta.tile_size,
                     layout=_fix_layout(a.meta.layout, a.meta.d))
    out = StoredArray(meta, a.pool, name=name, spool_dir=a.spool_dir)

    if op == "*":
        tcs = sorted(set(a.tile_coords()) & set(b.tile_coords()))
    elif op == "/":
        tcs = b.tile_coords()
    else:
        tcs = sorted(set(a.tile_coords()) | set(b.tile_coords()))
    dt = dtype_for(ValueType(kind))
    for tc in tcs:
        ta, tb = a.pin(tc), b.pin(tc)
        ma, (va,) = ta.to_scratch()
        mb, (vb,) = tb.to_scratch()
        a.unpin(tc)
        b.unpin(tc)
        va = va.astype(dt, copy=False)
        vb = vb.astype(dt, copy=False)
        if op == "+":
            om, ov = ma | mb, va + vb
        elif op == "-":
            om, ov = ma | mb, va - vb
        elif op == "*":
            om, ov = ma & mb, va * vb
        else:
            om = mb
            with np.errstate(divide="ignore", invalid="ignore"):
                ov = np.divide(va, vb, where=mb,
                               out=np.zeros_like(va, dtype=np.float64))
        if not om.any():
            continue
        cc = np.argwhere(om)
        idx = tuple(cc[:, i] for i in range(meta.d))
        tile = make_tile(tc, meta.tile_size, out.valid_extent(tc),
                         out.attr_dtypes, meta.layout, cc, [ov[idx]], sort=False)
        out.write_tile(tc, tile)
    return out


# -------------------------------------------------------------------- matmul

def matmul(a: StoredArray, b: StoredArray, *, name: str = "") -> StoredArray:
    if a.meta.d != 2 or b.meta.d != 2:
        raise ShapeError("matmul requires 2-D arrays")
    if a.meta.size[1] != b.meta.size[0]:
        raise ShapeError(
            f"inner dimensions disagree: {a.meta.size} @ {b.meta.size}")
    if len(a.attr_dtypes) != 1 or len(b.attr_dtypes) != 1:
        raise ShapeError("matmul needs single-attribute arrays")
    kind = "float" if "float" in (a.meta.schema.attr_types[0].kind,
                                  b.meta.schema.attr_types[0].kind) else "int"
    dt = dtype_for(ValueType(kind))
    dims = (a.meta.schema.dim_names[0], b.meta.schema.dim_names[1])
    attr = _merge_name(a.meta.schema.attr_names[0], b.meta.schema.attr_names[0])
    if dims[0] == dims[1] or attr in dims:
        dims, attr = ("dim0", "dim1"), "value"
    sch = CellSchema(dims, (attr,), (ValueType(kind),))
    size = (a.meta.size[0], b.meta.size[1])
    ts = (a.meta.tile_size[0], b.meta.tile_size[1])
    meta = ArrayMeta(sch, size, ts, layout="dense")
    out = StoredArray(meta, a.pool, name=name, spool_dir=a.spool_dir)

    if a.meta.tile_size[1] == b.meta.tile_size[0]:
        # conforming inner tiling: dense scratch per tile pair
        kt = a.meta.grid[1]
        for i in range(meta.grid[0]):
            ri = out.valid_extent((i, 0))[0]
            for j in range(meta.grid[1]):
                cj = out.valid_extent((0, j))[1]
                acc = np.zeros((ri, cj), dtype=dt)
                for k in range(kt):
                    ta = a.pin((i, k))
                    tb = b.pin((k, j))
                    _, (va,) = ta.to_scratch()
                    _, (vb,) = tb.to_scratch()
                    a.unpin((i, k))
                    b.unpin((k, j))
                    va = va[: a.valid_extent((i, k))[0], : a.valid_extent((i, k))[1]]
                    vb = vb[: b.valid_extent((k, j))[0], : b.valid_extent((k, j))[1]]
                    acc += va.astype(dt, copy=False) @ vb.astype(dt, copy=False)
                _write_dense_block(out, (i, j), acc)
    else:
        # mixed tile sizes: no shared inner tiling, go through full grids
        _, (ga,) = to_grid(a)
        _, (gb,) = to_grid(b)
        prod = ga.astype(dt, copy=False) @ gb.astype(dt, copy=False)
        return from_grid(meta, np.ones(size, dtype=bool), [prod], a.pool,
                         name=name, spool_dir=a.spool_dir)
    return out


def _write_dense_block(out: StoredArray, tc, block: np.ndarray) -> None:
    """Install a fully-present value block as one tile of `out`."""
    cc = np.argwhere(np.ones(block.shape, dtype=bool))
    idx = tuple(cc[:, i] for i in range(block.ndim))
    tile = make_tile(tc, out.meta.tile_size, out.valid_extent(tc),
                     out.attr_dtypes, out.meta.layout, cc, [block[idx]],
                     sort=False)
    out.write_tile(tc, tile)


# ----------------------------------------------------------------- transpose

def transpose(a: StoredArray, *, name: str = "") -> StoredArray:
    if a.meta.d != 2:
        raise ShapeError("transpose requires a 2-D array")
    sch = a.meta.schema
    dims = (sch.dim_names[1], sch.dim_names[0])
    if all(_is_auto(n) for n in dims):
        dims = ("dim0", "dim1")
    meta = ArrayMeta(CellSchema(dims, sch.attr_names, sch.attr_types),
                     (a.meta.size[1], a.meta.size[0]),
                     (a.meta.tile_size[1], a.meta.tile_size[0]),
                     layout=a.meta.layout)
    out = StoredArray(meta, a.pool, name=name, spool_dir=a.spool_dir)
    for tc in a.tile_coords():
        tile = a.pin(tc)
        cc, vals = tile.cells()
        a.unpin(tc)
        if len(cc) == 0:
            continue
        tile2 = make_tile((tc[1], tc[0]), meta.tile_size,
                          out.valid_extent((tc[1], tc[0])), out.attr_dtypes,
                          meta.layout, cc[:, ::-1], [v.copy() for v in vals])
        out.write_tile((tc[1], tc[0]), tile2)
    return out


# ----------------------------------------------------------- window / shift

def window(a: StoredArray, radius, agg: str, *, name: str = "") -> StoredArray:
    if agg not in _AGGS:
        raise ValueError(f"unknown window aggregate {agg!r}")
    radius = tuple(int(r) for r in radius)
    if len(radius) != a.meta.d:
        raise ShapeError(f"radius needs {a.meta.d} entries, got {len(radius)}")
    if any(r < 0 for r in radius):
        raise ValueError("window radius must be non-negative")
    mask, values = to_grid(a)
    size = a.meta.size
    count = np.zeros(size, dtype=np.int64)
    outs = [_agg_init(agg, size, v.dtype) for v in values]

    for offset in itertools.product(*[range(-r, r + 1) for r in radius]):
        src, dst = [], []
        for off, extent in zip(offset, size):
            # output[i] aggregates input[i+off] for every in-bounds off
            lo, hi = max(0, -off), min(extent, extent - off)
            dst.append(slice(lo, hi))
            src.append(slice(lo + off, hi + off))
        src, dst = tuple(src), tuple(dst)
        m = mask[src]
        count[dst] += m
        for out, v in zip(outs, values):
            _agg_step(agg, out[dst], v[src], m)

    out_mask = count > 0
    results, kinds = [], []
    for out, vt in zip(outs, a.meta.schema.attr_types):
        grid, kind = _agg_final(agg, out, count, out_mask, vt)
        results.append(grid)
        kinds.append(kind)
    sch = CellSchema(a.meta.schema.dim_names, a.meta.schema.attr_names,
                     tuple(ValueType(k) for k in kinds))
    meta = ArrayMeta(sch, size, a.meta.tile_size,
                     layout=_fix_layout(a.meta.layout, a.meta.d))
    return from_grid(meta, out_mask, results, a.pool, name=name,
                     spool_dir=a.spool_dir)


def _agg_init(agg: str, shape, dtype):
    if agg in ("sum", "avg"):
        return np.zeros(shape, dtype=np.float64 if agg == "avg" else dtype)
    if agg == "count":
        return np.zeros(shape, dtype=np.int64)
    fill = _extreme(dtype, want_max=(agg == "min"))
    return np.full(shape, fill, dtype=dtype)


def _extreme(dtype, want_max: bool):
    if np.issubdtype(dtype, np.inexact):
        return np.inf if want_max else -np.inf
    info = np.iinfo(dtype)
    return info.max if want_max else info.min


def _agg_step(agg: str, out_view, src_vals, src_mask) -> None:
    if agg in ("sum", "avg"):
        out_view += np.where(src_mask, src_vals, 0)
    elif agg == "count":
        pass  # count handled by the shared counter
    elif agg == "min":
        np.minimum(out_view, np.where(src_mask, src_vals,
                                      _extreme(src_vals.dtype, True)), out=out_view)
    else:
        np.maximum(out_view, np.where(src_mask, src_vals,
                                      _extreme(src_vals.dtype, False)), out=out_view)


def _agg_final(agg: str, acc, count, out_mask, vt: ValueType):
    if agg == "count":
        return count, "int"
    if agg == "avg":
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(out_mask, acc / count, 0.0), "float"
    if agg == "sum":
        return acc, vt.kind
    return np.where(out_mask, acc, 0), vt.kind  # min/max


# ------------------------------------------------------------- aggregation

def aggregate(a: StoredArray, collapse_dims, agg: str, *, name: str = "") -> StoredArray:
    """Collapse the named (or indexed) dimensions with one aggregate."""
    if agg not in _AGGS:
        raise ValueError(f"unknown aggregate {agg!r}")
    axes = _resolve_dims(a.meta.schema, collapse_dims)
    if not axes:
        raise ShapeError("aggregate needs at least one dimension to collapse")
    keep = [i for i in range(a.meta.d) if i not in axes]
    mask, values = to_grid(a)
    ax = tuple(sorted(axes))
    count = mask.sum(axis=ax)
    out_mask = count > 0

    grids, kinds = [], []
    for v, vt in zip(values, a.meta.schema.attr_types):
        if agg == "count":
            grids.append(count.astype(np.int64))
            kinds.append("int")
            continue
        if agg in ("sum", "avg"):
            s = np.where(mask, v, 0).sum(axis=ax,
                                         dtype=np.float64 if agg == "avg" else None)
            if agg == "avg":
                with np.errstate(invalid="ignore", divide="ignore"):
                    s = np.where(out_mask, s / count, 0.0)
                kinds.append("float")
            else:
                kinds.append(vt.kind)
            grids.append(s)
        else:
            fill = _extreme(v.dtype, want_max=(agg == "min"))
            red = np.minimum.reduce if agg == "min" else np.maximum.reduce
            r = red(np.where(mask, v, fill), axis=ax)
            grids.append(np.where(out_mask, r, 0))
            kinds.append(vt.kind)

    sch = a.meta.schema
    if keep:
        dims = tuple(sch.dim_names[i] for i in keep)
        size = tuple(a.meta.size[i] for i in keep)
        ts = tuple(a.meta.tile_size[i] for i in keep)
    else:
        # everything collapsed: a single-cell 1-D array
        dims, size, ts = ("dim0",), (1,), (1,)
        out_mask = out_mask.reshape(1)
        grids = [g.reshape(1) for g in grids]
    if set(dims) & set(sch.attr_names):
        dims = tuple(f"dim{i}" for i in range(len(dims)))
    meta = ArrayMeta(
        CellSchema(dims, sch.attr_names, tuple(ValueType(k) for k in kinds)),
        size, ts, layout=_fix_layout(a.meta.layout, len(size)))
    return from_grid(meta, out_mask, grids, a.pool, name=name,
                     spool_dir=a.spool_dir)


def _resolve_dims(sch: CellSchema, dims) -> set[int]:
    axes: set[int] = set()
    for d in dims:
        if isinstance(d, int):
            if not 0 <= d < sch.d:
                raise BoundsError(f"dimension index {d} out of range")
            axes.add(d)
        else:
            try:
                axes.add(sch.dim_names.index(d))
            except ValueError:
                raise BoundsError(f"unknown dimension {d!r}") from None
    return axes


# ------------------------------------------------------------------ subarray

def subarray(a: StoredArray, lo, hi, *, name: str = "") -> StoredArray:
    lo = tuple(int(x) for x in lo)
    hi = tuple(int(x) for x in hi)
    if len(lo) != a.meta.d or len(hi) != a.meta.d:
        raise ShapeError(f"bounds need {a.meta.d} entries")
    for l, h, s in zip(lo, hi, a.meta.size):
        if not (0 <= l < h <= s):
            raise BoundsError(f"invalid range [{lo}, {hi}) for size {a.meta.size}")
    mask, values = to_grid(a)
    sl = tuple(slice(l, h) for l, h in zip(lo, hi))
    size = tuple(h - l for l, h in zip(lo, hi))
    meta = ArrayMeta(a.meta.schema, size, a.meta.tile_size, layout=a.meta.layout)
    return from_grid(meta, mask[sl], [v[sl] for v in values], a.pool,
                     name=name, spool_dir=a.spool_dir)


# ---------------------------------------------------------------- build/rand

def build(meta: ArrayMeta, cells, pool: BufferPool, *, name: str = "",
          spool_dir: str | None = None) -> StoredArray:
    """cells: iterable of (coord tuple, value tuple)."""
    from .array_store import ArrayBuilder

    b = ArrayBuilder(meta, pool, name=name, spool_dir=spool_dir)
    rows = list(cells)
    if rows:
        coords = np.array([c for c, _ in rows], dtype=np.int64)
        cols = [np.array([v[i] for _, v in rows]) for i in range(len(rows[0][1]))]
        b.add_cells(coords, cols)
    return b.finish()


def rand(size, tile_size, seed: int, pool: BufferPool, *, name: str = "",
         spool_dir: str | None = None) -> StoredArray:
    """Dense uniform [0,1) array from a counter-based deterministic generator;
    the seed is recorded in the array metadata."""
    size = tuple(int(s) for s in size)
    sch = _auto_schema(len(size))
    meta = ArrayMeta(sch, size, tuple(int(t) for t in tile_size),
                     layout="dense", seed=int(seed))
    gen = np.random.Generator(np.random.Philox(seed))
    grid = gen.random(size)
    return from_grid(meta, np.ones(size, dtype=bool), [grid], pool,
                     name=name, spool_dir=spool_dir)


# ---------------------------------------------------------------- array join

def spatial_join_array(a: StoredArray, b: StoredArray, *, name: str = "") -> StoredArray:
    """Inner join on identical coordinates; attributes concatenated."""
    if a.meta.size != b.meta.size or a.meta.tile_size != b.meta.tile_size:
        raise ShapeError(
            f"spatial join operands disagree: {a.meta.size}/{a.meta.tile_size} "
            f"vs {b.meta.size}/{b.meta.tile_size}")
    sa, sb = a.meta.schema, b.meta.schema
    names = list(sa.attr_names)
    for n in sb.attr_names:
        names.append(n if n not in names and n not in sa.dim_names else f"{n}_r")
    if len(set(names)) != len(names):
        raise ShapeError(f"cannot disambiguate attribute names {names}")
    sch = CellSchema(sa.dim_names, tuple(names),
                     tuple(sa.attr_types) + tuple(sb.attr_types))
    meta = ArrayMeta(sch, a.meta.size, a.meta.tile_size,
                     layout=_fix_layout(a.meta.layout, a.meta.d))
    out = StoredArray(meta, a.pool, name=name, spool_dir=a.spool_dir)
    for tc in sorted(set(a.tile_coords()) & set(b.tile_coords())):
        ta, tb = a.pin(tc), b.pin(tc)
        ma, va = ta.to_scratch()
        mb, vb = tb.to_scratch()
        a.unpin(tc)
        b.unpin(tc)
        om = ma & mb
        if not om.any():
            continue
        cc = np.argwhere(om)
        idx = tuple(cc[:, i] for i in range(meta.d))
        cols = [v[idx] for v in va] + [v[idx] for v in vb]
        tile = make_tile(tc, meta.tile_size, out.valid_extent(tc),
                         out.attr_dtypes, meta.layout, cc, cols, sort=False)
        out.write_tile(tc, tile)
    return out
