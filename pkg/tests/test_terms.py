import pytest
from hypothesis import given, strategies as st

from cwcsim.terms import (
    Compartment,
    LabelGlob,
    PathError,
    Term,
    WrapContainsCompartment,
    as_root,
    canonical_key,
    collect_compartments,
    count_atom,
    count_compartments,
    format_term,
    normalize,
    resolve,
    term_eq,
    walk,
)
from oracle import random_term


def test_normalize_merges_atoms_and_orders_compartments():
    t = normalize(["b", "a", (2, "a"), ([], ["x"], "n"), (["w"], [], "m")])
    assert t.atoms == {"a": 3, "b": 1}
    assert [c.label for c in t.compartments] == ["m", "n"]
    assert format_term(t) == "3*a b (w | )^m ( | x)^n"


def test_equality_ignores_order_and_uids():
    a = Term({"a": 1}, [Compartment("m", {"x": 1}, Term({"b": 2})), Compartment("n")])
    b = Term({"a": 1}, [Compartment("n"), Compartment("m", {"x": 1}, Term({"b": 2}))])
    assert a == b and hash(a) == hash(b) and term_eq(a, b)
    assert a != Term({"a": 1}, [Compartment("n"), Compartment("m", {"x": 1}, Term({"b": 1}))])


def test_wrap_rejects_compartments():
    with pytest.raises(WrapContainsCompartment):
        Compartment("m", Term({"a": 1}))


def test_zero_counts_are_dropped():
    assert Term({"a": 0, "b": 1}).atoms == {"b": 1}


def test_walk_resolve_collect():
    t = normalize([([], ["a", ([], ["b"], "m")], "m"), ([], [], "n")])
    paths = [p for p, _ in walk(t)]
    assert paths[0] == ()
    outer = t.compartments[0]
    inner = outer.content.compartments[0]
    # paths are chains of compartment uids
    assert collect_compartments(t, "m") == [(outer.uid,), (outer.uid, inner.uid)]
    assert resolve(t, (outer.uid, inner.uid)).content.atoms == {"b": 1}
    with pytest.raises(PathError):
        resolve(t, (inner.uid,))


def test_label_glob():
    g = LabelGlob("S*/m")
    assert g.matches(("top", "S1", "m"))
    assert not g.matches(("top", "m"))
    assert not g.matches(("top", "T1", "m"))
    with pytest.raises(ValueError):
        LabelGlob("a*b")


def test_count_atom_scopes():
    t = normalize([(["x", "x"], ["x", "y"], "c_1"), (["x"], [], "e_1"), "x"])
    assert count_atom(t, "x", "c_*", "content") == 1
    assert count_atom(t, "x", "c_*", "wrap") == 2
    assert count_atom(t, "x", "c_*", "both") == 3
    assert count_atom(t, "x", "top") == 1
    assert count_atom(t, "x", "*", "both") == 5
    assert count_compartments(t, "c_*") == 1
    assert count_compartments(t, "*") == 3


@given(st.randoms(use_true_random=False))
def test_normalize_is_idempotent(rng):
    t = random_term(rng)
    once = normalize(t)
    assert once == t
    assert canonical_key(normalize(once)) == canonical_key(once)
    assert format_term(normalize(once)) == format_term(once)


@given(st.randoms(use_true_random=False))
def test_as_root_wraps_term(rng):
    t = random_term(rng)
    root = as_root(t)
    assert root.label == "top" and root.content is t
