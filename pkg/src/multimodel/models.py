"""Core data model: relations, documents/collections and array metadata.

Three value families live here. Relational data is a schema (name, type pairs)
plus rows of plain Python values; documents are order-preserving dicts whose
order never affects equality; arrays carry only metadata here (storage is in
array_store). Values are restricted to: int, unsigned int, 64-bit float, str,
bool, None, list, nested dict.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .errors import PathError

__all__ = [
    "ABSENT",
    "ValueType",
    "INT",
    "UINT",
    "FLOAT",
    "STRING",
    "BOOL",
    "Relation",
    "Collection",
    "CellSchema",
    "ArrayMeta",
    "ValidationIssue",
    "validate_relation",
    "dot_get",
    "dot_set",
    "relation_to_csv",
    "relation_from_csv",
    "collection_to_jsonl",
    "collection_from_jsonl",
    "infer_type",
]


class _Absent:
    """Marker distinct from None: 'no such cell / key', not 'null value'."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ABSENT"

    def __bool__(self):
        return False


ABSENT = _Absent()


@dataclass(frozen=True)
class ValueType:
    """Attribute type. kind is one of int|uint|float|string|bool|list|doc;
    elem declares the single element type of a list attribute in a relation."""

    kind: str
    elem: "ValueType | None" = None

    def __post_init__(self):
        if self.kind not in ("int", "uint", "float", "string", "bool", "list", "doc"):
            raise ValueError(f"unknown value kind {self.kind!r}")
        if self.elem is not None and self.kind != "list":
            raise ValueError("only list types take an element type")

    def __str__(self):
        if self.kind == "list" and self.elem is not None:
            return f"list<{self.elem}>"
        return self.kind

    @staticmethod
    def parse(text: str) -> "ValueType":
        text = text.strip()
        if text.startswith("list<") and text.endswith(">"):
            return ValueType("list", ValueType.parse(text[5:-1]))
        return ValueType(text)

    def accepts(self, v) -> bool:
        """Whether value v (None always allowed) conforms to this type."""
        if v is None:
            return True
        k = self.kind
        if k == "int":
            return isinstance(v, int) and not isinstance(v, bool)
        if k == "uint":
            return isinstance(v, int) and not isinstance(v, bool) and v >= 0
        if k == "float":
            return isinstance(v, (int, float)) and not isinstance(v, bool)
        if k == "string":
            return isinstance(v, str)
        if k == "bool":
            return isinstance(v, bool)
        if k == "list":
            if not isinstance(v, list):
                return False
            if self.elem is None:
                return True
            return all(self.elem.accepts(e) for e in v)
        if k == "doc":
            return isinstance(v, dict)
        return False


INT = ValueType("int")
UINT = ValueType("uint")
FLOAT = ValueType("float")
STRING = ValueType("string")
BOOL = ValueType("bool")


@dataclass
class Relation:
    """Schema plus rows. Rows are tuples; treat instances as immutable."""

    schema: list[tuple[str, ValueType]]
    rows: list[tuple]

    def __post_init__(self):
        names = [n for n, _ in self.schema]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in schema: {names}")

    @property
    def attr_names(self) -> list[str]:
        return [n for n, _ in self.schema]

    def attr_index(self, name: str) -> int:
        for i, (n, _) in enumerate(self.schema):
            if n == name:
                return i
        raise KeyError(name)

    def __len__(self):
        return len(self.rows)


@dataclass
class Collection:
    """A named sequence of documents (plain dicts, insertion-ordered)."""

    name: str
    docs: list[dict]

    def __len__(self):
        return len(self.docs)


@dataclass(frozen=True)
class CellSchema:
    """Cell layout of an array: dimension names first, then value attributes."""

    dim_names: tuple[str, ...]
    attr_names: tuple[str, ...]
    attr_types: tuple[ValueType, ...]

    def __post_init__(self):
        if len(self.dim_names) < 1:
            raise ValueError("arrays need at least one dimension")
        all_names = self.dim_names + self.attr_names
        if len(set(all_names)) != len(all_names):
            raise ValueError(f"names not unique across dims and attrs: {all_names}")
        if len(self.attr_names) != len(self.attr_types):
            raise ValueError("attr_names and attr_types length mismatch")

    @property
    def d(self) -> int:
        return len(self.dim_names)


@dataclass(frozen=True)
class ArrayMeta:
    """Declared array extent and tiling. Coordinates are 0-based and must be
    strictly below size per dimension; size is metadata, never derived from
    the cells actually present."""

    schema: CellSchema
    size: tuple[int, ...]       # AS: length per dimension
    tile_size: tuple[int, ...]  # TS: tile extent per dimension
    layout: str = "dense"       # dense | coo | csr (per-array creation choice)
    seed: int | None = None     # recorded by rand() for reproducibility

    def __post_init__(self):
        d = self.schema.d
        if len(self.size) != d or len(self.tile_size) != d:
            raise ValueError("size/tile_size arity must match dimension count")
        if any(s < 0 for s in self.size) or any(t <= 0 for t in self.tile_size):
            raise ValueError("size must be >= 0 and tile_size positive")
        if self.layout not in ("dense", "coo", "csr"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.layout == "csr" and d != 2:
            raise ValueError("csr layout is 2-D only")

    @property
    def d(self) -> int:
        return self.schema.d

    @property
    def grid(self) -> tuple[int, ...]:
        """Tile count per dimension: ceil(size / tile_size)."""
        return tuple(-(-s // t) for s, t in zip(self.size, self.tile_size))


@dataclass(frozen=True)
class ValidationIssue:
    row: int
    attr: int | None  # None for arity violations
    reason: str


def validate_relation(rel: Relation) -> list[ValidationIssue]:
    """Report every row violating schema arity or per-attribute type.

    Never raises; an empty report means the relation is valid. Null is
    permitted in any attribute.
    """
    issues: list[ValidationIssue] = []
    arity = len(rel.schema)
    for r, row in enumerate(rel.rows):
        if len(row) != arity:
            issues.append(ValidationIssue(r, None, f"arity {len(row)} != {arity}"))
            continue
        for a, ((name, vt), v) in enumerate(zip(rel.schema, row)):
            if not vt.accepts(v):
                issues.append(
                    ValidationIssue(r, a, f"attr {name!r}: {v!r} is not {vt}")
                )
    return issues


def _split_path(path: str) -> list[str]:
    if not isinstance(path, str) or not path:
        raise PathError(f"empty path {path!r}")
    parts = path.split(".")
    if any(p == "" for p in parts):
        raise PathError(f"malformed path {path!r} (empty segment)")
    return parts


def dot_get(doc: dict, path: str):
    """Value at a dotted path inside a nested document, or ABSENT.

    ABSENT means a key along the path is missing or an intermediate value is
    not a document; a stored null comes back as None, which is different.
    """
    cur = doc
    for part in _split_path(path):
        if not isinstance(cur, dict) or part not in cur:
            return ABSENT
        cur = cur[part]
    return cur


def dot_set(doc: dict, path: str, value) -> dict:
    """Copy of doc with the value at path replaced (path must resolve)."""
    parts = _split_path(path)
    out = dict(doc)
    cur = out
    for part in parts[:-1]:
        nxt = dict(cur[part])
        cur[part] = nxt
        cur = nxt
    cur[parts[-1]] = value
    return out


# --- canonical text formats ------------------------------------------------

def _cell_to_text(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, dict)):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _cell_from_text(text: str, vt: ValueType):
    if text == "":
        return None
    k = vt.kind
    if k in ("int", "uint"):
        return int(text)
    if k == "float":
        return float(text)
    if k == "bool":
        return text.strip().lower() == "true"
    if k in ("list", "doc"):
        return json.loads(text)
    return text


def relation_to_csv(rel: Relation) -> str:
    """RFC-4180 CSV with the header row carrying attribute names."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(rel.attr_names)
    for row in rel.rows:
        w.writerow([_cell_to_text(v) for v in row])
    return buf.getvalue()


def infer_type(texts: list[str]) -> ValueType:
    """Cheapest type that parses every non-empty sample."""
    seen = [t for t in texts if t != ""]
    if not seen:
        return STRING
    if all(t.strip().lower() in ("true", "false") for t in seen):
        return BOOL
    try:
        for t in seen:
            int(t)
        return INT
    except ValueError:
        pass
    try:
        for t in seen:
            float(t)
        return FLOAT
    except ValueError:
        pass
    return STRING


def relation_from_csv(text: str, schema: list[tuple[str, ValueType]] | None = None) -> Relation:
    """Parse canonical CSV. Without a declared schema, column types are
    inferred from the data (int, then float, then bool, else string)."""
    rows_raw = list(csv.reader(io.StringIO(text)))
    if not rows_raw:
        raise ValueError("CSV needs at least a header row")
    header, body = rows_raw[0], rows_raw[1:]
    if schema is None:
        cols = list(zip(*body)) if body else [[] for _ in header]
        schema = [
            (name, infer_type(list(col))) for name, col in zip(header, cols)
        ]
    else:
        if [n for n, _ in schema] != header:
            raise ValueError("declared schema does not match CSV header")
    types = [vt for _, vt in schema]
    rows = [tuple(_cell_from_text(t, vt) for t, vt in zip(r, types)) for r in body]
    return Relation(schema, rows)


def collection_to_jsonl(col: Collection) -> str:
    return "".join(json.dumps(d, ensure_ascii=False) + "\n" for d in col.docs)


def collection_from_jsonl(text: str, name: str = "") -> Collection:
    docs = [json.loads(line) for line in text.splitlines() if line.strip()]
    return Collection(name, docs)
