"""Gillespie direct-method simulation over CWC rule sets.

Multiplicities are cached per (rule, compartment) and refreshed only where
a rewrite can have changed them: the context compartment, every
compartment the rewrite rebuilt, and those ancestors whose rules look deep
enough into the tree to see the change.  ``check=True`` recomputes
everything after each event and compares, which the tests use to keep the
cache honest.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .model import Model, evaluate_observables
from .patterns import Pattern, Rule, multiplicity, rewrite, select, enumerate_sites
from .terms import TOP, Compartment, Term, as_root, copy_term

GENERATOR = "python-random-mt19937"
DEFAULT_MAX_EVENTS = 10**7

REACHED_T_END = "reached_t_end"
EXHAUSTED = "exhausted"
EVENT_CAP = "event_cap"


class NonFiniteTau(ArithmeticError):
    """Total propensity is not finite."""


class CacheMismatch(AssertionError):
    pass


@dataclass(frozen=True)
class SimConfig:
    t_end: float
    dt_sample: float
    seed: int = 0
    max_events: int = DEFAULT_MAX_EVENTS

    def __post_init__(self):
        if not self.dt_sample > 0:
            raise ValueError("dt_sample must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.max_events < 1:
            raise ValueError("max_events must be positive")

    def sample_times(self) -> list[float]:
        n = math.floor(self.t_end / self.dt_sample + 1e-9) + 1
        return [i * self.dt_sample for i in range(n)]


def propensity(rule: Rule, system) -> float:
    """Rate times the number of reactant combinations over all sites."""
    return rule.rate * sum(site.multiplicity for site in enumerate_sites(rule, system))


def _watched(pattern: Pattern, level: int, out: list[set]) -> None:
    while len(out) <= level:
        out.append(set())
    out[level].update(name for name, _ in pattern.atoms)
    for cp in pattern.compartments:
        _watched(cp.content, level + 1, out)


class Event(NamedTuple):
    rule: Rule
    context: Compartment
    time: float


class SimState:
    """Mutable simulation state: the system, the clock and the generator.

    The state owns a private copy of ``init``; compartments are numbered
    from 1 in creation order (the root is 0).
    """

    def __init__(self, rules, init: Term, seed: int = 0, *, check: bool = False):
        self.rules: list[Rule] = list(rules)
        self._uids = itertools.count(1)
        self.root = Compartment(TOP, None, copy_term(init, self.new_uid), 0)
        self.rng = random.Random(seed)
        self.time = 0.0
        self.event_count = 0
        self.check = check

        self._by_label: dict[str, list[int]] = {}
        self._depth: list[int] = []
        self._watch: list[list[set]] = []
        for i, rule in enumerate(self.rules):
            self._by_label.setdefault(rule.context, []).append(i)
            self._depth.append(rule.lhs.depth())
            watch: list[set] = []
            _watched(rule.lhs, 0, watch)
            self._watch.append(watch)
        self._max_depth = max(self._depth, default=0)
        self._rates = [r.rate for r in self.rules]
        self.sites: list[dict[int, int]] = [{} for _ in self.rules]
        self.totals = [0] * len(self.rules)
        self.props = [0.0] * len(self.rules)
        self._nodes: dict[int, Compartment] = {}
        self._indexed: dict[int, str] = {}

        stack = [self.root]
        while stack:
            comp = stack.pop()
            for child in comp.content.compartments:
                child.parent = comp
                stack.append(child)
            self._index(comp)

    def new_uid(self) -> int:
        return next(self._uids)

    @property
    def term(self) -> Term:
        return self.root.content

    # -- cache maintenance ------------------------------------------------

    def _set(self, r: int, comp: Compartment, m: int) -> None:
        table = self.sites[r]
        old = table.get(comp.uid, 0)
        if m != old:
            if m:
                table[comp.uid] = m
            else:
                del table[comp.uid]
            self.totals[r] += m - old
            self.props[r] = self._rates[r] * self.totals[r]

    def _index(self, comp: Compartment) -> None:
        self._nodes[comp.uid] = comp
        self._indexed[comp.uid] = comp.label
        for r in self._by_label.get(comp.label, ()):
            self._set(r, comp, multiplicity(self.rules[r].lhs, comp.content))

    def _purge(self, comp: Compartment) -> None:
        label = self._indexed.pop(comp.uid, None)
        if label is None:
            return
        for r in self._by_label.get(label, ()):
            self._set(r, comp, 0)
        del self._nodes[comp.uid]

    def _refresh(self, change) -> None:
        for comp in change.removed:
            self._purge(comp)
        for comp in change.fresh:
            if self._indexed.get(comp.uid, comp.label) != comp.label:
                self._purge(comp)
            for child in comp.content.compartments:
                child.parent = comp
            self._index(comp)
        atoms = change.atoms
        structural = change.structural
        node = change.context
        distance = 0
        while node is not None and distance <= self._max_depth:
            for r in self._by_label.get(node.label, ()):
                watch = self._watch[r]
                if ((structural and self._depth[r] > distance)
                        or (distance < len(watch) and not atoms.isdisjoint(watch[distance]))):
                    self._set(r, node, multiplicity(self.rules[r].lhs, node.content))
            node = node.parent
            distance += 1

    def verify_cache(self) -> None:
        """Recompute every multiplicity from scratch and compare."""
        expected = [dict() for _ in self.rules]
        stack = [self.root]
        while stack:
            comp = stack.pop()
            stack.extend(comp.content.compartments)
            for r in self._by_label.get(comp.label, ()):
                m = multiplicity(self.rules[r].lhs, comp.content)
                if m:
                    expected[r][comp.uid] = m
        for r, rule in enumerate(self.rules):
            if expected[r] != self.sites[r] or sum(expected[r].values()) != self.totals[r]:
                raise CacheMismatch(f"rule {rule.name}: cached {self.sites[r]} != {expected[r]}")

    # -- stepping ---------------------------------------------------------

    def total_propensity(self) -> float:
        a0 = sum(self.props)
        if not math.isfinite(a0):
            raise NonFiniteTau(f"total propensity is {a0}")
        return a0

    def draw_tau(self, a0: float) -> float:
        u = self.rng.random()
        while u == 0.0:
            u = self.rng.random()
        return -math.log(u) / a0

    def choose_rule(self, a0: float) -> int:
        threshold = self.rng.random() * a0
        acc = 0.0
        last = -1
        for r, a in enumerate(self.props):
            if a:
                acc += a
                last = r
                if threshold < acc:
                    return r
        return last

    def fire(self, r: int) -> Event:
        """Pick a site and reactant selection for rule ``r`` and apply it."""
        rule = self.rules[r]
        j = self.rng.randrange(self.totals[r])
        for uid, m in self.sites[r].items():
            if j < m:
                break
            j -= m
        ctx = self._nodes[uid]
        change = rewrite(ctx, rule, select(rule.lhs, ctx.content, j), self.new_uid)
        self._refresh(change)
        self.event_count += 1
        if self.check:
            self.verify_cache()
        return Event(rule, ctx, self.time)

    def step(self) -> Event | None:
        """One direct-method event, or ``None`` when nothing can fire."""
        a0 = self.total_propensity()
        if a0 == 0:
            return None
        self.time += self.draw_tau(a0)
        return self.fire(self.choose_rule(a0))


def step(state: SimState) -> Event | None:
    return state.step()


@dataclass
class Trajectory:
    times: list[float]
    names: list[str]
    rows: list[list[float]]
    reason: str
    events: int
    generator: str = GENERATOR
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> list[float]:
        i = self.names.index(name)
        return [row[i] for row in self.rows]


SampleHook = Callable[[float, Compartment], None]


ENGINES = ("auto", "term", "network")


def select_engine(model: Model, engine: str = "auto"):
    """Resolve ``engine`` to ``("term", None)`` or ``("network", net)``.

    ``auto`` uses the compiled network whenever the rule set never changes
    the compartment tree.
    """
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}, got {engine!r}")
    if engine == "term":
        return "term", None
    from . import network
    if network.numba is None and engine == "auto":
        return "term", None
    try:
        return "network", network.compile_network(model.rules, model.init)
    except network.NotStatic:
        if engine == "network":
            raise
        return "term", None


def simulate(model: Model, config: SimConfig, *, sample_hook: SampleHook | None = None,
             check: bool = False, engine: str = "auto") -> Trajectory:
    """Run one trajectory, sampling observables on the regular time grid.

    A sample at time ``t`` reflects every event that occurred at or before
    ``t``.  Hitting ``config.max_events`` stops early and returns only the
    samples reached so far.  ``check`` cross-checks cached propensities
    against a full recomputation (after every event for the term engine,
    at every sample for the network engine).
    """
    kind, net = select_engine(model, engine)
    if kind == "network":
        return _simulate_network(model, net, config, sample_hook, check)
    state = SimState(model.rules, model.init, config.seed, check=check)
    observables = list(model.observables)
    grid = config.sample_times()
    n = len(grid)
    rows: list[list[float]] = []

    def record(i):
        rows.append(evaluate_observables(observables, state.root))
        if sample_hook is not None:
            sample_hook(grid[i], state.root)

    t_end = config.t_end
    i = 0
    while True:
        a0 = state.total_propensity()
        if a0 == 0:
            reason = EXHAUSTED
            break
        t_next = state.time + state.draw_tau(a0)
        while i < n and grid[i] < t_next:
            record(i)
            i += 1
        if t_next > t_end:
            reason = REACHED_T_END
            break
        if state.event_count >= config.max_events:
            reason = EVENT_CAP
            break
        state.time = t_next
        state.fire(state.choose_rule(a0))
    if reason != EVENT_CAP:
        while i < n:
            record(i)
            i += 1
    return Trajectory(grid[:len(rows)], [o.name for o in observables], rows, reason,
                      state.event_count, meta={"seed": config.seed, "engine": "term"})


def _simulate_network(model, net, config, sample_hook, check) -> Trajectory:
    from . import network
    grid = config.sample_times()
    counts, events, reason = network.run(net, grid, config.t_end, config.seed, config.max_events)
    observables = list(model.observables)
    weights, scales = net.observable_matrix(observables)
    raw = counts @ weights.T
    rows = []
    for values in raw.tolist():
        rows.append([c if o.scale == 1.0 else c * o.scale for c, o in zip(values, observables)])
    if sample_hook is not None or check:
        for t, x in zip(grid, counts):
            term = net.to_term(x)
            if check:
                fast = net.rule_propensities(x)
                for rule, a in zip(model.rules, fast):
                    b = propensity(rule, term)
                    if a != b:
                        raise CacheMismatch(f"rule {rule.name} at t={t}: network {a} != term {b}")
            if sample_hook is not None:
                sample_hook(t, as_root(term))
    return Trajectory(grid[:len(rows)], [o.name for o in observables], rows, reason, events,
                      generator=network.GENERATOR, meta={"seed": config.seed, "engine": "network"})
