import pytest
from hypothesis import given, settings, strategies as st

from cwcsim import load_builtin
from cwcsim.dsl import ModelError, ModelSource, expand, format_model, format_rule, load, parse
from cwcsim.library import BUILTINS
from cwcsim.patterns import OpenTerm, Rule
from cwcsim.terms import count_compartments
from oracle import random_instance


def diagnostics(text):
    with pytest.raises(ModelError) as info:
        load(text)
    return info.value.diagnostics


def kinds(text):
    return [d.kind for d in diagnostics(text)]


def test_basic_model():
    m = load("""
param k = 2
# comment
rule r1 @top: a b -> [k * 1.5] c
rule @m: (~x | a $X)^n -> [1] (~x | $X)^n a
init: 2*a 2*b ( | ( | a)^n)^m
observe c : count c in top content
observe wrapped : count a in m/n both scale 0.5
sim t_end=3 dt=0.5 seed=9
""")
    assert [r.name for r in m.rules] == ["r1", "r2"]
    assert m.rules[0].rate == 3.0
    assert m.defaults == {"t_end": 3.0, "dt": 0.5, "seed": 9.0}
    assert m.observables[1].scope == "both" and m.observables[1].scale == 0.5
    assert count_compartments(m.init, "m/n") == 1


def test_loops_and_interpolation():
    m = load("""
param n = 3
for i in 1..n {
  for d in 1..2 {
    rule move_{i}_{wrap(i + d, n)} @top: (~x | a $X)^S{i} (~y | $Y)^S{wrap(i+d, n)}
      -> [1] (~x | $X)^S{i} (~y | a $Y)^S{wrap(i+d, n)}
  }
  init: ( | {i}*a)^S{i}
}
""")
    assert len(m.rules) == 6
    assert {r.name for r in m.rules} >= {"move_3_1", "move_3_2", "move_1_2"}
    assert count_compartments(m.init, "S*") == 3
    assert sorted(c.content.atoms["a"] for c in m.init.compartments) == [1, 2, 3]


def test_wrap5_min_max():
    m = load("""
for i in 1..5 {
  rule r_{i}_{wrap5(i+1)}_{min(i, 2)}_{max(i, 4)} @top: a -> [1] b
}
init: a
""")
    assert [r.name for r in m.rules] == ["r_1_2_1_4", "r_2_3_2_4", "r_3_4_2_4", "r_4_5_2_4", "r_5_1_2_5"]


def test_param_override_and_zero_rate_drop():
    src = "param k = 0\nparam n = 2\nrule r @top: a -> [k] b\nrule s @top: a -> [1] b\ninit: {n}*a\n"
    m = load(src)
    assert [r.name for r in m.rules] == ["s"]
    m = load(src, {"k": 2, "n": 4})
    assert [r.name for r in m.rules] == ["r", "s"]
    assert m.init.atoms == {"a": 4}
    assert m.params["n"] == 4


def test_unterminated_rate_position():
    d = diagnostics("rule r @top: a -> [1 b\ninit: a\n")
    assert d[0].kind == "UnterminatedRate"
    assert (d[0].line, d[0].col) == (1, 22)


def test_several_diagnostics_reported_together():
    ks = kinds("""
rule r @top: (~x | a $X -> [1] b
rule q @top: a -> [1] ( | b)
init: a
""")
    assert ks == ["UnterminatedCompartment", "MissingLabel"]


@pytest.mark.parametrize("text, kind", [
    ("rule r @top: ( | a $X)^m -> [1] a\ninit: a\n", "Linearity"),
    ("rule r @top: (~x | a)^m -> [1] a\ninit: a\n", "Linearity"),
    ("rule r @top: a -> [1] $Z\ninit: a\n", "UnboundVariable"),
    ("rule r @top: a -> [1] b\nrule r @top: b -> [1] a\ninit: a\n", "DuplicateRule"),
    ("rule r @top: a -> [k] b\ninit: a\n", "UnboundIdentifier"),
    ("rule r @top: a -> [1] ( | a)^top\ninit: a\n", "ReservedLabel"),
    ("rule r @top: a -> [1] b\ninit: ( ( | a)^m | b)^n\n", "WrapContainsCompartment"),
    ("rule r @top: a -> [1] b\ninit: a $X\n", "VariableInInit"),
    ("observe o : count a in top sideways\ninit: a\n", "BadScope"),
    ("for i in 1..2 {\n rule r_{i} @top: a -> [1] b\ninit: a\n", "UnterminatedLoop"),
    ("sim t_stop=3\ninit: a\n", "UnknownSetting"),
    ("rule r @top: a -> [1 / 0] b\ninit: a\n", "DivisionByZero"),
])
def test_diagnostic_kinds(text, kind):
    assert kind in kinds(text)


def test_unknown_parameter_override_suggests():
    with pytest.raises(ModelError) as info:
        load("param rate = 1\nrule r @top: a -> [rate] b\ninit: a\n", {"rtae": 2})
    d = info.value.diagnostics[0]
    assert d.kind == "UnknownParameter" and "rate" in d.message


def test_origin_in_messages():
    with pytest.raises(ModelError) as info:
        parse(ModelSource("rule r @top: a -> [1 b\n", "demo.cwc"))
        raise AssertionError("no error")
    assert str(info.value).startswith("demo.cwc:1:")


def test_init_top_wrapper_is_unwrapped():
    assert load("init: ( | a b)^top\n").init == load("init: a b\n").init


@pytest.mark.parametrize("name", BUILTINS)
def test_builtin_round_trip(name):
    m = load_builtin(name)
    text = format_model(m)
    again = load(text)
    again.name = m.name
    assert again == m
    assert format_model(again).splitlines()[1:] == text.splitlines()[1:]


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_random_rule_round_trip(rng):
    rule, system = random_instance(rng)
    rule = Rule("r", rule.context, rule.lhs, OpenTerm({"z": 1}), 1.25)
    text = format_rule(rule) + "\ninit: a\n"
    parsed = load(text).rules[0]
    assert parsed == rule


def test_expand_is_repeatable():
    ast = parse(ModelSource("param n = 2\nfor i in 1..n { init: ( | a)^m{i} }\n"))
    assert expand(ast) == expand(ast)
    assert len(expand(ast, {"n": 3}).init.compartments) == 3
