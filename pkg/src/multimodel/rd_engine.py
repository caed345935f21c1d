"""Relational and document executor.

Operator-at-a-time evaluation of tree-shaped plans: scan, filter, project,
sort, limit, aggregate, union, join, unwind, plus alias-refs into a registry
of materialized results. One executor serves both record models; documents
use dotted paths wherever relations use column references.

Column references carry optional qualifiers ("review.oid"): a bare name must
resolve to exactly one column, a qualified name matches its source relation.
Joins preserve qualifiers so collisions stay addressable; converting back to a
public Relation renders colliding names as "qualifier.name".

Null semantics are SQL-like (see predicates); sorting places nulls last under
either direction, with full-row lexicographic order as the deterministic
tie-break.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .errors import NotFoundError, PlanError, TypeMismatchError
from .models import ABSENT, Collection, Relation, ValueType, dot_get, dot_set
from .predicates import (
    And,
    eval_predicate,
    equi_conjuncts,
    universal_key,
)

__all__ = ["RdNode", "RelFrame", "DocFrame", "execute_tree", "node",
           "frame_to_public", "relation_frame", "collection_frame"]

INT = ValueType("int")
FLOAT = ValueType("float")
STRING = ValueType("string")


@dataclass
class RdNode:
    op: str
    params: dict = field(default_factory=dict)
    children: list = field(default_factory=list)


def node(op: str, *children: RdNode, **params) -> RdNode:
    return RdNode(op, params, list(children))


@dataclass
class RelFrame:
    cols: list  # [(qualifier | None, name)]
    types: list
    rows: list  # [tuple]


@dataclass
class DocFrame:
    quals: tuple
    docs: list


def relation_frame(rel: Relation, qualifier: str | None = None) -> RelFrame:
    return RelFrame([(qualifier, n) for n, _ in rel.schema],
                    [t for _, t in rel.schema], list(rel.rows))


def collection_frame(col: Collection, qualifier: str | None = None) -> DocFrame:
    return DocFrame((qualifier or col.name,), list(col.docs))


def frame_to_public(f):
    if isinstance(f, DocFrame):
        return Collection("result", f.docs)
    names = _public_names(f.cols)
    return Relation(list(zip(names, f.types)), list(f.rows))


def _public_names(cols) -> list[str]:
    bare = [n for _, n in cols]
    names = []
    for q, n in cols:
        names.append(n if bare.count(n) == 1 or q is None else f"{q}.{n}")
    # belt and braces: force uniqueness even if qualifiers collide
    seen: dict[str, int] = {}
    out = []
    for n in names:
        k = seen.get(n, 0)
        seen[n] = k + 1
        out.append(n if k == 0 else f"{n}#{k}")
    return out


# ------------------------------------------------------------ ref resolution

def _col_index(frame: RelFrame, path: str) -> int:
    head, _, rest = path.partition(".")
    if rest:
        matches = [i for i, (q, n) in enumerate(frame.cols)
                   if q == head and n == rest]
        if not matches:  # a column literally named with the dotted path
            matches = [i for i, (_, n) in enumerate(frame.cols) if n == path]
    else:
        matches = [i for i, (_, n) in enumerate(frame.cols) if n == path]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise PlanError(f"cannot resolve column {path!r}")
    raise PlanError(f"ambiguous column reference {path!r}")


def _doc_value(quals: tuple, doc: dict, path: str):
    v = dot_get(doc, path)
    if v is ABSENT:
        head, _, rest = path.partition(".")
        if rest and head in quals:
            v = dot_get(doc, rest)
    return None if v is ABSENT else v


def _rel_lookup(frame: RelFrame, row):
    cache: dict[str, int] = {}

    def lookup(path: str):
        idx = cache.get(path)
        if idx is None:
            idx = cache[path] = _col_index(frame, path)
        return row[idx]

    return lookup


# ----------------------------------------------------------------- execution

def execute_tree(tree: RdNode, registry: dict | None = None):
    """Run a plan tree; returns a Relation or Collection."""
    return frame_to_public(_exec(tree, registry or {}))


def _exec(n: RdNode, reg: dict):
    op = n.op
    if op == "scan":
        return _scan(n.params, reg)
    if op == "alias_ref":
        key = n.params["key"]
        if key not in reg:
            raise PlanError(f"unresolved alias {key!r}")
        return _as_frame(reg[key], n.params.get("qualifier"))

    kids = [_exec(c, reg) for c in n.children]
    if op == "filter":
        return _filter(kids[0], n.params["pred"])
    if op == "project":
        return _project(kids[0], n.params["cols"], n.params.get("names"))
    if op == "sort":
        return _sort(kids[0], n.params["keys"])
    if op == "limit":
        return _limit(kids[0], n.params["n"])
    if op == "aggregate":
        return _aggregate(kids[0], n.params.get("keys", []), n.params["aggs"])
    if op == "union":
        return _union(kids[0], kids[1])
    if op == "join":
        return _join(kids[0], kids[1], n.params["pred"])
    if op == "unwind":
        return _unwind(kids[0], n.params["path"])
    raise PlanError(f"unknown operator {op!r}")


def _scan(params: dict, reg: dict):
    name = params["name"]
    if name not in reg:
        raise NotFoundError(f"dataset {name!r} not found")
    return _as_frame(reg[name], params.get("qualifier") or name)


def _as_frame(obj, qualifier):
    if isinstance(obj, Relation):
        return relation_frame(obj, qualifier)
    if isinstance(obj, Collection):
        return collection_frame(obj, qualifier)
    if isinstance(obj, RelFrame):
        return RelFrame(list(obj.cols), list(obj.types), list(obj.rows))
    if isinstance(obj, DocFrame):
        return DocFrame(obj.quals, list(obj.docs))
    raise PlanError(f"cannot scan object of type {type(obj).__name__}")


def _filter(f, pred):
    if isinstance(f, RelFrame):
        rows = [r for r in f.rows if eval_predicate(pred, _rel_lookup(f, r))]
        return RelFrame(f.cols, f.types, rows)
    docs = [d for d in f.docs
            if eval_predicate(pred, lambda p, d=d: _doc_value(f.quals, d, p))]
    return DocFrame(f.quals, docs)


def _project(f, cols, names):
    out_names = names or [c.rpartition(".")[2] for c in cols]
    if isinstance(f, RelFrame):
        idx = [_col_index(f, c) for c in cols]
        rows = [tuple(r[i] for i in idx) for r in f.rows]
        return RelFrame([(None, n) for n in out_names],
                        [f.types[i] for i in idx], rows)
    docs = []
    for d in f.docs:
        out = {}
        for c, n in zip(cols, out_names):
            v = dot_get(d, c)
            if v is ABSENT:
                head, _, rest = c.partition(".")
                if rest and head in f.quals:
                    v = dot_get(d, rest)
            if v is not ABSENT:
                out[n] = v
        docs.append(out)
    return DocFrame(f.quals, docs)


def _sort(f, keys):
    if isinstance(f, RelFrame):
        rows = sorted(f.rows, key=lambda r: tuple(universal_key(v) for v in r))
        for ref, desc in reversed(keys):
            i = _col_index(f, ref)
            rows.sort(key=lambda r: _sort_key(r[i], desc), reverse=desc)
        return RelFrame(f.cols, f.types, rows)
    docs = sorted(f.docs, key=universal_key)
    for ref, desc in reversed(keys):
        docs.sort(key=lambda d: _sort_key(_doc_value(f.quals, d, ref), desc),
                  reverse=desc)
    return DocFrame(f.quals, docs)


def _sort_key(v, desc: bool):
    # nulls sort last under both directions
    null_rank = (0 if desc else 1) if v is None else (1 if desc else 0)
    return (null_rank, universal_key(v))


def _limit(f, k: int):
    if isinstance(f, RelFrame):
        return RelFrame(f.cols, f.types, f.rows[:k])
    return DocFrame(f.quals, f.docs[:k])


def _union(a, b):
    if isinstance(a, RelFrame) and isinstance(b, RelFrame):
        if len(a.cols) != len(b.cols):
            raise TypeMismatchError(
                f"union arity mismatch: {len(a.cols)} vs {len(b.cols)}")
        return RelFrame(a.cols, a.types, a.rows + b.rows)
    if isinstance(a, DocFrame) and isinstance(b, DocFrame):
        return DocFrame(tuple(dict.fromkeys(a.quals + b.quals)), a.docs + b.docs)
    raise TypeMismatchError("cannot union a relation with a collection")


def _unwind(f, path: str):
    if not isinstance(f, DocFrame):
        raise TypeMismatchError("unwind applies to collections")
    docs = []
    for d in f.docs:
        v = dot_get(d, path)
        if v is ABSENT:
            continue  # documents lacking the path contribute nothing
        if not isinstance(v, list):
            raise TypeMismatchError(f"unwind path {path!r} is not a list")
        for elem in v:
            docs.append(dot_set(d, path, elem))
    return DocFrame(f.quals, docs)


# ---------------------------------------------------------------- aggregate

_STAR = object()  # count(*) marker: counts rows, nulls included


def _aggregate(f, keys, aggs):
    if isinstance(f, RelFrame):
        key_idx = [_col_index(f, k) for k in keys]
        get_key = lambda r: tuple(r[i] for i in key_idx)
        get_val = lambda r, ref: r[_col_index(f, ref)]
        rows_iter = f.rows
        key_types = [f.types[i] for i in key_idx]
    else:
        get_key = lambda d: tuple(_doc_value(f.quals, d, k) for k in keys)
        get_val = lambda d, ref: _doc_value(f.quals, d, ref)
        rows_iter = f.docs
        key_types = [STRING for _ in keys]  # document key types are dynamic

    groups: dict = {}  # insertion order == first appearance
    for r in rows_iter:
        kv = get_key(r)
        gk = tuple(universal_key(v) for v in kv)
        if gk not in groups:
            groups[gk] = (kv, [_new_acc() for _ in aggs])
        _, accs = groups[gk]
        for acc, (func, ref, _) in zip(accs, aggs):
            _acc_add(acc, func, _STAR if ref is None else get_val(r, ref))

    out_rows = []
    if not keys and not rows_iter:
        # aggregate over empty input with no grouping -> one identity row
        out_rows.append(tuple(_acc_final(_new_acc(), func)
                              for func, _, _ in aggs))
    for kv, accs in groups.values():
        out_rows.append(tuple(kv) + tuple(
            _acc_final(acc, func) for acc, (func, _, _) in zip(accs, aggs)))

    cols = [(None, k.rpartition(".")[2]) for k in keys] + \
           [(None, name) for _, _, name in aggs]
    agg_types = [_agg_type(func, i, groups) for i, (func, _, _) in enumerate(aggs)]
    return RelFrame(cols, key_types + agg_types, out_rows)


def _agg_type(func, i, groups) -> ValueType:
    if func == "count":
        return INT
    if func == "avg":
        return FLOAT
    for _, accs in groups.values():
        v = accs[i]["value"]
        if isinstance(v, bool) or isinstance(v, str):
            return STRING
        if isinstance(v, float):
            return FLOAT
        if isinstance(v, int):
            return INT
    return FLOAT


def _new_acc():
    return {"n": 0, "value": None}


def _acc_add(acc, func, v):
    if func == "count":
        if v is _STAR or v is not None:
            acc["n"] += 1
        return
    if v is _STAR:
        raise PlanError(f"{func}(*) is not defined; name an attribute")
    if v is None:
        return  # nulls never feed sum/min/max/avg
    if func in ("sum", "avg"):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise TypeMismatchError(f"{func} needs numeric input, got {v!r}")
        acc["n"] += 1
        acc["value"] = v if acc["value"] is None else acc["value"] + v
    elif func in ("min", "max"):
        cur = acc["value"]
        if cur is not None and type(cur) is not type(v) and not (
                isinstance(cur, (int, float)) and isinstance(v, (int, float))):
            raise TypeMismatchError(f"{func} over mixed types")
        acc["value"] = v if cur is None else (
            min(cur, v) if func == "min" else max(cur, v))
    else:
        raise PlanError(f"unknown aggregate {func!r}")


def _acc_final(acc, func):
    if func == "count":
        return acc["n"]
    if func == "avg":
        return None if acc["n"] == 0 else acc["value"] / acc["n"]
    return acc["value"]


# --------------------------------------------------------------------- joins

def _join(left, right, pred):
    if isinstance(left, RelFrame) and isinstance(right, RelFrame):
        return _join_rel(left, right, pred)
    ldoc = left if isinstance(left, DocFrame) else _rel_to_doc(left)
    rdoc = right if isinstance(right, DocFrame) else _rel_to_doc(right)
    return _join_doc(ldoc, rdoc, pred)


def _rel_to_doc(f: RelFrame) -> DocFrame:
    quals = tuple(dict.fromkeys(q for q, _ in f.cols if q))
    docs = [{n: v for (_, n), v in zip(f.cols, r) if v is not None}
            for r in f.rows]
    return DocFrame(quals, docs)


def _resolvable_rel(f: RelFrame, path: str) -> bool:
    try:
        _col_index(f, path)
        return True
    except PlanError:
        return False


def _split_equi(pred, left_has, right_has):
    """Assign each ref=ref conjunct to sides; unassignable ones go residual."""
    pairs, residual = equi_conjuncts(pred)
    keyed, rest = [], []
    for a, b in pairs:
        if left_has(a) and right_has(b) and not (left_has(b) and right_has(a)):
            keyed.append((a, b))
        elif left_has(b) and right_has(a) and not (left_has(a) and right_has(b)):
            keyed.append((b, a))
        elif left_has(a) and right_has(b):
            keyed.append((a, b))  # resolvable both ways; keep written order
        else:
            rest.append(("=", a, b))
    if rest:
        from .predicates import Cmp, Ref
        extra = tuple(Cmp(op, Ref(a), Ref(b)) for op, a, b in rest)
        residual = And(extra + ((residual,) if residual else ())) \
            if len(extra) + (residual is not None) > 1 else extra[0]
    return keyed, residual


def _join_rel(left: RelFrame, right: RelFrame, pred):
    out_cols = list(left.cols) + list(right.cols)
    out_types = list(left.types) + list(right.types)
    out = RelFrame(out_cols, out_types, [])

    keyed, residual = _split_equi(
        pred, lambda p: _resolvable_rel(left, p),
        lambda p: _resolvable_rel(right, p))

    def keep(row):
        return residual is None or eval_predicate(residual, _rel_lookup(out, row))

    if keyed:
        li = [_col_index(left, a) for a, _ in keyed]
        ri = [_col_index(right, b) for _, b in keyed]
        table: dict = {}
        for rr in right.rows:
            kv = tuple(rr[i] for i in ri)
            if any(v is None for v in kv):
                continue
            table.setdefault(tuple(universal_key(v) for v in kv), []).append(rr)
        for lr in left.rows:
            kv = tuple(lr[i] for i in li)
            if any(v is None for v in kv):
                continue
            for rr in table.get(tuple(universal_key(v) for v in kv), ()):
                row = lr + rr
                if keep(row):
                    out.rows.append(row)
    else:
        for lr in left.rows:
            for rr in right.rows:
                row = lr + rr
                if eval_predicate(pred, _rel_lookup(out, row)):
                    out.rows.append(row)
    return out


def _join_doc(left: DocFrame, right: DocFrame, pred):
    quals = tuple(dict.fromkeys(left.quals + right.quals))

    def strip(path: str, side: DocFrame) -> str:
        head, _, rest = path.partition(".")
        return rest if rest and head in side.quals else path

    def lhas(p):
        head = p.partition(".")[0]
        if head in left.quals:
            return True
        if head in right.quals:
            return False
        return any(_doc_value(left.quals, d, p) is not None for d in left.docs)

    def rhas(p):
        head = p.partition(".")[0]
        if head in right.quals:
            return True
        if head in left.quals:
            return False
        return any(_doc_value(right.quals, d, p) is not None for d in right.docs)

    keyed, residual = _split_equi(pred, lhas, rhas)

    def merged(ld, rd):
        out = dict(ld)
        for k, v in rd.items():
            if k not in out:
                out[k] = v
        return out

    out_docs = []
    if keyed:
        table: dict = {}
        for rd in right.docs:
            kv = tuple(_doc_value(right.quals, rd, strip(b, right)) for _, b in keyed)
            if any(v is None for v in kv):
                continue
            table.setdefault(tuple(universal_key(v) for v in kv), []).append(rd)
        for ld in left.docs:
            kv = tuple(_doc_value(left.quals, ld, strip(a, left)) for a, _ in keyed)
            if any(v is None for v in kv):
                continue
            for rd in table.get(tuple(universal_key(v) for v in kv), ()):
                doc = merged(ld, rd)
                if residual is None or eval_predicate(
                        residual, lambda p, doc=doc: _doc_value(quals, doc, p)):
                    out_docs.append(doc)
    else:
        for ld in left.docs:
            for rd in right.docs:
                doc = merged(ld, rd)
                if eval_predicate(pred,
                                  lambda p, doc=doc: _doc_value(quals, doc, p)):
                    out_docs.append(doc)
    return DocFrame(quals, out_docs)
