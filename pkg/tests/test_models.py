from __future__ import annotations

import random

import pytest

from multimodel.errors import PathError
from multimodel.models import (
    ABSENT,
    INT,
    STRING,
    Collection,
    Relation,
    ValueType,
    collection_from_jsonl,
    collection_to_jsonl,
    dot_get,
    dot_set,
    infer_type,
    relation_from_csv,
    relation_to_csv,
    validate_relation,
)


# ---------------------------------------------------------------- validation

def test_validate_conforming_rows_empty_report():
    rel = Relation([("id", INT)], [(1,), (2,)])
    assert validate_relation(rel) == []


def test_validate_type_mismatch_cites_row_and_attr():
    rel = Relation([("id", INT)], [(1,), ("x",)])
    report = validate_relation(rel)
    assert len(report) == 1
    assert report[0].row == 1
    assert report[0].attr == 0  # attribute position, None for arity issues


def test_validate_arity_violation():
    rel = Relation([("a", INT), ("b", STRING)], [(1, "x"), (1,)])
    report = validate_relation(rel)
    assert [(i.row, i.attr) for i in report] == [(1, None)]


def test_validate_null_is_always_allowed():
    rel = Relation([("a", INT)], [(None,)])
    assert validate_relation(rel) == []


def test_validate_report_equals_mutation_set():
    # corrupt k rows at known positions; the report must match exactly
    rng = random.Random(7)
    schema = [("a", INT), ("b", STRING)]
    rows = [(i, f"s{i}") for i in range(50)]
    mutated = set()
    for _ in range(10):
        r = rng.randrange(50)
        while r in mutated:
            r = rng.randrange(50)
        mutated.add(r)
        a, b = rows[r]
        rows[r] = ("bad", b) if rng.random() < 0.5 else (a, 123)
    report = validate_relation(Relation(schema, rows))
    assert {i.row for i in report} == mutated
    assert len(report) == len(mutated)


def test_relation_rejects_duplicate_attr_names():
    with pytest.raises(ValueError):
        Relation([("a", INT), ("a", INT)], [])


def test_bool_is_not_an_int():
    rel = Relation([("a", INT)], [(True,)])
    assert len(validate_relation(rel)) == 1


# ---------------------------------------------------------------- dot paths

def test_dot_get_nested():
    doc = {"id": 1015, "geometry": {"type": "Point"}}
    assert dot_get(doc, "geometry.type") == "Point"


def test_dot_get_top_level():
    assert dot_get({"x": 3}, "x") == 3


def test_dot_get_missing_key_absent():
    assert dot_get({"a": {"b": 1}}, "a.c") is ABSENT


def test_dot_get_through_non_dict_absent():
    assert dot_get({"a": {"b": [1, 2]}}, "a.b.c") is ABSENT


@pytest.mark.parametrize("path", ["", "a..b", ".a", "a."])
def test_dot_get_malformed_path(path):
    with pytest.raises(PathError):
        dot_get({"a": 1}, path)


def _random_doc(rng: random.Random, depth: int):
    if depth == 0 or rng.random() < 0.3:
        return rng.choice([1, "s", 2.5, True, None, [1, 2]])
    return {f"k{i}": _random_doc(rng, depth - 1) for i in range(rng.randint(1, 3))}


def _walk(doc, prefix=""):
    # independent recursive traversal: every root-to-value path
    for k, v in doc.items():
        p = f"{prefix}.{k}" if prefix else k
        yield p, v
        if isinstance(v, dict):
            yield from _walk(v, p)


def test_dot_get_matches_reference_walker():
    rng = random.Random(11)
    for _ in range(25):
        doc = _random_doc(rng, 4)
        if not isinstance(doc, dict):
            continue
        for path, expect in _walk(doc):
            assert dot_get(doc, path) == expect


def test_dot_get_absent_iff_not_a_prefix_path():
    doc = {"a": {"b": 1}, "c": 2}
    present = {p for p, _ in _walk(doc)}
    for path in ["a", "a.b", "c", "a.x", "c.d", "q", "a.b.c"]:
        if path in present:
            assert dot_get(doc, path) is not ABSENT
        else:
            assert dot_get(doc, path) is ABSENT


def test_dot_set_copy_on_write():
    doc = {"a": {"b": 1}}
    out = dot_set(doc, "a.c", 9)
    assert out == {"a": {"b": 1, "c": 9}}
    assert doc == {"a": {"b": 1}}  # original untouched


# ---------------------------------------------------------------- text formats

def test_csv_round_trip():
    rel = Relation(
        [("id", INT), ("name", STRING), ("score", ValueType("float"))],
        [(1, "ann", 1.5), (2, "bob, jr.", -0.25), (3, None, 2.0)],
    )
    back = relation_from_csv(relation_to_csv(rel), schema=rel.schema)
    assert back.schema == rel.schema
    assert back.rows == rel.rows


def test_csv_infers_types_without_schema():
    text = "id,flag,score,name\n1,true,1.5,ann\n2,false,2,bob\n"
    rel = relation_from_csv(text)
    kinds = [t.kind for _, t in rel.schema]
    assert kinds == ["int", "bool", "float", "string"]
    assert rel.rows[0] == (1, True, 1.5, "ann")


def test_infer_type_order():
    assert infer_type(["true", "false"]).kind == "bool"
    assert infer_type(["3", "4"]).kind == "int"
    assert infer_type(["3", "4.5"]).kind == "float"
    assert infer_type(["3", "abc"]).kind == "string"


def test_jsonl_round_trip_preserves_order():
    docs = [{"b": 1, "a": 2}, {"x": {"y": [1, {"z": None}]}}]
    col = Collection("stuff", docs)
    back = collection_from_jsonl(collection_to_jsonl(col), name="stuff")
    assert back.docs == docs
    assert list(back.docs[0]) == ["b", "a"]


def test_value_type_parse_round_trip():
    for s in ["int", "uint", "float", "string", "bool", "list<int>", "doc"]:
        assert str(ValueType.parse(s)) == s
