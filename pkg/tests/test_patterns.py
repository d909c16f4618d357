from math import comb

import pytest
from hypothesis import given, settings, strategies as st

from cwcsim.patterns import (
    CompartmentPattern,
    OpenCompartment,
    OpenTerm,
    Pattern,
    Rule,
    StaleBinding,
    apply_rule,
    enumerate_sites,
    multiplicity,
    select,
    select_reactants,
    validate_rule,
)
from cwcsim.terms import Compartment, Term, count_atom, normalize
from oracle import random_instance, random_twin_instance, selections, total_multiplicity


def cp(label, wrap=(), content=None, x="x", X="X"):
    return CompartmentPattern(label, wrap, (x,), content or Pattern(), (X,))


def rule(lhs, rhs=OpenTerm(), context="top", rate=1.0):
    return Rule("r", context, lhs, rhs, rate)


def test_mass_action_binomials():
    content = Term({"a": 5, "b": 3})
    assert multiplicity(Pattern({"a": 2}), content) == comb(5, 2)
    assert multiplicity(Pattern({"a": 2, "b": 3}), content) == comb(5, 2)
    assert multiplicity(Pattern({"a": 6}), content) == 0
    assert multiplicity(Pattern(), content) == 1


def test_identical_compartment_patterns_are_unordered():
    children = [Compartment("m", {"w": 1}) for _ in range(4)]
    content = Term({}, children)
    twins = Pattern((), (cp("m", x="x", X="X"), cp("m", x="y", X="Y")))
    assert multiplicity(twins, content) == comb(4, 2)
    distinct = Pattern((), (cp("m", {"w": 1}, x="x", X="X"), cp("m", x="y", X="Y")))
    assert multiplicity(distinct, content) == 4 * 3


def test_wrap_and_nested_counts():
    inner = Term({"a": 3})
    content = Term({}, [Compartment("m", {"p": 2}, inner)])
    pat = Pattern((), (cp("m", {"p": 1}, Pattern({"a": 2})),))
    assert multiplicity(pat, content) == 2 * 3


def test_enumerate_sites_counts_every_context():
    t = normalize([([], ["a", "a"], "m"), ([], ["a"], "m"), ([], [], "m")])
    r = rule(Pattern({"a": 1}), context="m")
    sites = enumerate_sites(r, t)
    assert sorted(s.multiplicity for s in sites) == [1, 2]


def test_select_covers_each_selection_once():
    t = normalize([([], ["a", "a", "b"], "m"), ([], ["a"], "m"), ([], ["a", "b"], "m"), "a", "a"])
    pat = Pattern({"a": 1}, (cp("m", (), Pattern({"a": 1}), "x", "X"), cp("m", (), Pattern({"a": 1}), "y", "Y")))
    m = multiplicity(pat, t)
    seen = set()
    for i in range(m):
        sel = select(pat, t, i)
        seen.add((sel.atoms, frozenset((c.uid, w, s.atoms) for _, c, w, s in sel.compartments)))
    assert len(seen) == m == len(selections(pat, t))


def test_validate_rule_linearity_and_binding():
    bad = Rule("r", "top", Pattern((), (CompartmentPattern("m", (), (), Pattern(), ("X",)),)),
               OpenTerm((), ("Z",)), 0.0)
    kinds = {v.kind for v in validate_rule(bad)}
    assert kinds == {"NonPositiveRate", "Linearity", "UnboundVariable"}
    dup = rule(Pattern((), (cp("m", x="x", X="X"), cp("m", x="x", X="Y"))))
    assert {v.kind for v in validate_rule(dup)} == {"DuplicateVariable"}


def test_apply_rule_is_pure_and_rewrites():
    t = normalize(["a", "b", ([], ["c"], "m")])
    lhs = Pattern({"a": 1}, (cp("m"),))
    rhs = OpenTerm((), (), (OpenCompartment("m", (), ("x",), OpenTerm({"a": 1}, ("X",))),))
    r = rule(lhs, rhs)
    site = enumerate_sites(r, t)[0]
    out = apply_rule(t, r, select_reactants(r, site, t, 0))
    assert out == normalize(["b", ([], ["a", "c"], "m")])
    assert t == normalize(["a", "b", ([], ["c"], "m")])


def test_stale_binding_detected():
    t = normalize(["a"])
    r = rule(Pattern({"a": 1}))
    b = select_reactants(r, enumerate_sites(r, t)[0], t, 0)
    with pytest.raises(StaleBinding):
        apply_rule(Term({"b": 1}), r, b)


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_multiplicity_matches_oracle(rng):
    r, system = random_instance(rng)
    assert sum(s.multiplicity for s in enumerate_sites(r, system)) == total_multiplicity(r, system)


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_twin_patterns_match_oracle(rng):
    r, system = random_twin_instance(rng, third=True)
    assert sum(s.multiplicity for s in enumerate_sites(r, system)) == total_multiplicity(r, system)


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_selections_are_a_bijection(rng):
    r, system = random_twin_instance(rng, third=True)
    m = multiplicity(r.lhs, system)
    keys = {b.reactants() for b in (select_reactants(r, enumerate_sites(r, system)[0], system, i)
                                    for i in range(m))} if m else set()
    assert len(keys) == m


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False), st.integers(0, 10**6))
def test_consuming_rule_conserves_other_atoms(rng, pick):
    # a rule that only moves an atom into a child keeps every count
    r, system = random_twin_instance(rng)
    lhs = Pattern(r.lhs.atoms, r.lhs.compartments[:1])
    cp0 = lhs.compartments[0]
    moved = OpenCompartment(cp0.label, cp0.wrap_atoms, (cp0.wrap_var,),
                            OpenTerm(cp0.content.atoms, (cp0.content_var,)))
    r = rule(lhs, OpenTerm(r.lhs.atoms, (), (moved,)))
    sites = enumerate_sites(r, system)
    if not sites:
        return
    out = apply_rule(system, r, select_reactants(r, sites[0], system, pick % sites[0].multiplicity))
    for atom in "abcde":
        assert count_atom(out, atom, "*", "both") == count_atom(system, atom, "*", "both")
