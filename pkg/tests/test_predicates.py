from __future__ import annotations

import pytest

from multimodel.errors import ScriptError, TypeMismatchError
from multimodel.predicates import (
    And,
    Cmp,
    Lit,
    Not,
    Or,
    Ref,
    compare_values,
    equi_conjuncts,
    eval_predicate,
    parse_predicate,
    parse_sort_spec,
    predicate_refs,
    universal_key,
)


def test_parse_simple_comparison():
    assert parse_predicate("a = 1") == Cmp("=", Ref("a"), Lit(1))
    assert parse_predicate("x.y >= 2.5") == Cmp(">=", Ref("x.y"), Lit(2.5))


def test_parse_precedence_and_binds_tighter_than_or():
    got = parse_predicate("a = 1 or b = 2 and c = 3")
    assert isinstance(got, Or)
    assert isinstance(got.items[1], And)


def test_parse_parens_override():
    got = parse_predicate("(a = 1 or b = 2) and c = 3")
    assert isinstance(got, And)
    assert isinstance(got.items[0], Or)


def test_parse_not():
    got = parse_predicate("not a = 1 and b = 2")
    assert isinstance(got, And)
    assert isinstance(got.items[0], Not)


def test_parse_literals():
    assert parse_predicate("a = 'it''s'".replace("''", "\\'")) == \
        Cmp("=", Ref("a"), Lit("it's"))
    assert parse_predicate("a != true").right == Lit(True)
    assert parse_predicate("a = null").right == Lit(None)
    assert parse_predicate("a = -3").right == Lit(-3)


def test_parse_errors_carry_position():
    with pytest.raises(ScriptError) as e:
        parse_predicate("a = $")
    assert "col 5" in str(e.value)
    with pytest.raises(ScriptError):
        parse_predicate("a =")
    with pytest.raises(ScriptError):
        parse_predicate("a = 1 extra")


def test_sort_spec():
    assert parse_sort_spec("rating DESC") == [("rating", True)]
    assert parse_sort_spec("a, b desc, c asc") == [
        ("a", False), ("b", True), ("c", False)]
    with pytest.raises(ScriptError):
        parse_sort_spec("a sideways")


# ---------------------------------------------------------------- evaluation

def test_null_comparisons_are_all_false():
    for op in ("=", "!=", "<", "<=", ">", ">="):
        assert compare_values(op, None, 1) is False
        assert compare_values(op, 1, None) is False
        assert compare_values(op, None, None) is False


def test_numeric_cross_type_equality():
    assert compare_values("=", 1, 1.0) is True
    assert compare_values("<", 1, 1.5) is True


def test_incomparable_types():
    assert compare_values("=", 1, "1") is False
    assert compare_values("!=", 1, "1") is True
    with pytest.raises(TypeMismatchError):
        compare_values("<", 1, "1")


def test_eval_with_lookup():
    pred = parse_predicate("cid = 3 and rating > 2")
    row = {"cid": 3, "rating": 4.5}
    assert eval_predicate(pred, row.get) is True
    assert eval_predicate(pred, {"cid": 3, "rating": 1.0}.get) is False
    assert eval_predicate(pred, {"cid": 3, "rating": None}.get) is False


def test_universal_key_total_order():
    vals = [None, False, True, -3, 2.5, 7, "a", "b", [1], {"k": 1}]
    keys = [universal_key(v) for v in vals]
    assert keys == sorted(keys)


# ------------------------------------------------------------------ analysis

def test_equi_conjuncts_full():
    pairs, rest = equi_conjuncts(parse_predicate("a.x = b.x and a.y = b.y"))
    assert pairs == [("a.x", "b.x"), ("a.y", "b.y")]
    assert rest is None


def test_equi_conjuncts_with_residual():
    pairs, rest = equi_conjuncts(parse_predicate("a.x = b.x and a.y > 3"))
    assert pairs == [("a.x", "b.x")]
    assert rest == Cmp(">", Ref("a.y"), Lit(3))


def test_or_yields_no_pairs():
    pairs, rest = equi_conjuncts(parse_predicate("a.x = b.x or a.y = b.y"))
    assert pairs == []
    assert rest is not None


def test_literal_equality_is_not_a_pair():
    pairs, rest = equi_conjuncts(parse_predicate("a.x = 3"))
    assert pairs == []
    assert rest == Cmp("=", Ref("a.x"), Lit(3))


def test_predicate_refs_in_order():
    refs = predicate_refs(parse_predicate("b = 1 and a.c > 2 or not b = 2"))
    assert refs == ["b", "a.c"]
