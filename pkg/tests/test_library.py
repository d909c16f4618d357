import pytest

from cwcsim.library import (
    BUILTINS,
    UnknownBuiltin,
    builtin_observables,
    default_thresholds,
    describe_builtin,
    load_builtin,
)
from cwcsim.patterns import validate_rule
from cwcsim.terms import count_atom, count_compartments


def rule_names(model):
    return {r.name for r in model.rules}


def test_quorum_expansion_counts():
    m = load_builtin("quorum")
    diffusion = {r.name: r.rate for r in m.rules if r.name.startswith("diff_")}
    # one rule per nonzero channel (1-4, 2-3, 2-4, 3-4)
    assert diffusion == {"diff_1_4": 0.1, "diff_2_3": 0.2, "diff_2_4": 0.3, "diff_3_4": 0.3}
    assert len(m.rules) == 13 + 12 + 4
    both = load_builtin("quorum", {"symmetric": 1})
    reverse = {r.name: r.rate for r in both.rules if r.name.startswith("diff_")}
    assert len(both.rules) == 13 + 12 + 8
    assert reverse["diff_4_1"] == reverse["diff_1_4"] == 0.1
    assert count_compartments(m.init, "S*") == 4
    assert count_compartments(m.init, "m") == 48
    assert [count_compartments(m.init, f"S{i}/m") for i in range(1, 5)] == [10, 15, 15, 8]
    assert count_atom(m.init, "I", "m") == 48
    assert count_atom(m.init, "LasORI", "m") == 48


def test_am_expansion_counts():
    m = load_builtin("am_symbiosis")
    assert len(m.rules) == 70
    assert count_compartments(m.init, "L_*") == 4
    assert count_compartments(m.init, "e_*") == 5
    assert count_compartments(m.init, "c_*") == 10
    assert count_atom(m.init, "P", "*") == 40
    assert count_atom(m.init, "Spore", "L_2") == 1
    assert "R_CB_1_5_1" in rule_names(m)
    assert m.rule("R_A_2_3").rate == 1.0
    m100 = load_builtin("am_symbiosis", {"P": 100})
    assert count_atom(m100.init, "P", "L_0") == 100


def test_grid_expansion_counts():
    m = load_builtin("grid")
    # 3 phase rules per cell, 2 directions per adjacent pair (2 * 4 * 5 pairs per axis)
    assert len(m.rules) == 3 * 25 + 2 * 2 * 20
    assert count_compartments(m.init, "g_*") == 25
    assert count_atom(m.init, "e", "g_*") == 25
    seeded = load_builtin("grid", {"seeded": 1, "K": 2, "N": 3})
    assert count_compartments(seeded.init, "g_*/cell") == 1
    assert len(seeded.rules) == 3 * 6 + 2 * (2 * 2 + 3)


def test_rules_are_valid():
    for name in BUILTINS:
        for r in load_builtin(name).rules:
            assert validate_rule(r) == []


def test_descriptors_and_thresholds():
    d = describe_builtin("am_symbiosis")
    assert d.presets["high"] == {"P": 100}
    assert "rule" in d.source
    assert default_thresholds("quorum") == {f"active_S{i}": 50.0 for i in range(1, 5)}
    assert "mitotic" in [o.name for o in builtin_observables("grid")]
    with pytest.raises(UnknownBuiltin):
        load_builtin("nope")
