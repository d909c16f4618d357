import math

import pytest

from cwcsim import load_builtin
from cwcsim.dsl import load
from cwcsim.engine import (
    EVENT_CAP,
    EXHAUSTED,
    REACHED_T_END,
    SimConfig,
    SimState,
    propensity,
    select_engine,
    simulate,
)
from cwcsim.terms import count_atom

DECAY = """
rule decay @top: a -> [2] b
init: a
observe a : count a in top content
"""

FLIP = """
rule ab @top: a -> [1] b
rule ba @top: b -> [1] a
init: 100*a
observe a : count a in top content
"""


def test_config_validation_and_grid():
    assert SimConfig(1.0, 0.25).sample_times() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert SimConfig(0.0, 0.1).sample_times() == [0.0]
    assert SimConfig(0.05, 0.1).sample_times() == [0.0]
    # the grid is i * dt, not a running sum
    assert SimConfig(0.3, 0.1).sample_times()[-1] == 3 * 0.1
    for bad in ({"dt_sample": 0}, {"t_end": -1}, {"seed": -1}, {"seed": 2**64}, {"max_events": 0}):
        kw = {"t_end": 1.0, "dt_sample": 0.1, **bad}
        with pytest.raises(ValueError):
            SimConfig(**kw)


def test_mass_action_propensity():
    m = load("rule r @top: a b -> [3] c\ninit: 2*a 2*b\n")
    assert propensity(m.rules[0], m.init) == 12.0


@pytest.mark.parametrize("engine", ["term", "network"])
def test_exhausted_and_reasons(engine):
    m = load(DECAY)
    traj = simulate(m, SimConfig(100.0, 1.0, seed=3), engine=engine)
    assert traj.reason == EXHAUSTED
    assert traj.events == 1
    assert len(traj.rows) == 101
    assert traj.rows[-1] == [0]
    assert traj.meta["engine"] == engine


@pytest.mark.parametrize("engine", ["term", "network"])
def test_event_cap_truncates(engine):
    m = load(FLIP)
    traj = simulate(m, SimConfig(100.0, 0.5, seed=1, max_events=50), engine=engine)
    assert traj.reason == EVENT_CAP
    assert traj.events == 50
    assert 0 < len(traj.rows) < 201
    assert traj.times == SimConfig(100.0, 0.5).sample_times()[:len(traj.rows)]


@pytest.mark.parametrize("engine", ["term", "network"])
def test_reached_t_end_and_zero_horizon(engine):
    m = load(FLIP)
    traj = simulate(m, SimConfig(2.0, 0.5, seed=1), engine=engine)
    assert traj.reason == REACHED_T_END and len(traj.rows) == 5
    assert traj.rows[0] == [100]
    zero = simulate(m, SimConfig(0.0, 0.5, seed=1), engine=engine)
    assert zero.rows == [[100]] and zero.events == 0


@pytest.mark.parametrize("engine", ["term", "network"])
def test_same_seed_same_trajectory(engine):
    m = load(FLIP)
    a = simulate(m, SimConfig(5.0, 0.1, seed=11), engine=engine)
    b = simulate(m, SimConfig(5.0, 0.1, seed=11), engine=engine)
    c = simulate(m, SimConfig(5.0, 0.1, seed=12), engine=engine)
    assert a.rows == b.rows and a.events == b.events
    assert a.rows != c.rows


def test_samples_reflect_events_up_to_sample_time():
    # the single decay event is visible from the first sample after it
    m = load(DECAY)
    state = SimState(m.rules, m.init, seed=5)
    t_fire = state.step().time
    traj = simulate(m, SimConfig(10.0, 0.01, seed=5), engine="term")
    for t, (a,) in zip(traj.times, traj.rows):
        assert a == (1 if t < t_fire else 0)


def test_term_cache_check_on_builtins():
    for name, t_end in (("am_symbiosis", 6.0), ("grid", 4.0)):
        params = {"seeded": 1} if name == "grid" else None
        m = load_builtin(name, params)
        traj = simulate(m, SimConfig(t_end, 0.5, seed=2), check=True, engine="term")
        assert traj.events > 0


def test_quorum_cache_check_short():
    m = load_builtin("quorum")
    traj = simulate(m, SimConfig(0.3, 0.1, seed=4), check=True, engine="term")
    assert traj.events > 100


def test_auto_engine_selection():
    assert select_engine(load_builtin("quorum"))[0] == "network"
    assert select_engine(load_builtin("am_symbiosis"))[0] == "network"
    assert select_engine(load_builtin("grid"))[0] == "term"
    assert select_engine(load_builtin("quorum"), "term") == ("term", None)
    with pytest.raises(ValueError):
        select_engine(load_builtin("quorum"), "fast")


@pytest.mark.parametrize("engine", ["term", "network"])
def test_flip_flop_relaxation(engine):
    # a(t) has mean 50 + 50 exp(-2t); 400 replicas give a standard error below 0.4
    m = load(FLIP)
    n = 400
    total = 0
    for seed in range(n):
        total += simulate(m, SimConfig(0.5, 0.5, seed=seed), engine=engine).rows[-1][0]
    expected = 50 + 50 * math.exp(-1.0)
    assert abs(total / n - expected) < 1.6


def test_sample_hook_sees_terms():
    m = load_builtin("grid", {"seeded": 1})
    seen = []
    simulate(m, SimConfig(1.0, 0.5, seed=1), sample_hook=lambda t, root: seen.append(
        (t, count_atom(root, "m", "cell", "wrap"))))
    assert [t for t, _ in seen] == [0.0, 0.5, 1.0]
    assert seen[0][1] == 1
