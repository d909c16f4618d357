"""Compiled engine for models whose compartment tree never changes.

When every rule keeps each matched compartment in place (same label, same
wrap and content variables) and only adds or removes atoms, the system is
a plain reaction network.  Its species are ``(compartment, wrap|content,
atom)`` triples and each (rule, context compartment, compartment
assignment) triple is one mass-action reaction.  Summed per rule, the
reaction propensities equal the rule propensities of the term engine, so
both engines sample the same Markov chain.

The direct-method loop runs under numba.  Draws come from xoshiro256**
seeded through splitmix64, so the per-seed stream differs from the term
engine's; trajectories are reproducible per (engine, seed).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .patterns import OpenTerm, Pattern, Rule
from .terms import TOP, Compartment, LabelGlob, Term, copy_term

GENERATOR = "xoshiro256**"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


class NotStatic(ValueError):
    """The model moves, creates or destroys compartments."""


# -- static-structure check ------------------------------------------------

def _static_level(lhs: Pattern, rhs: OpenTerm, top: bool, where: str) -> list[int]:
    """Pair each lhs compartment pattern with the rhs compartment keeping it.

    Returns ``order`` with ``rhs.compartments[order[k]]`` rebuilding
    ``lhs.compartments[k]``.
    """
    if rhs.vars and top:
        raise NotStatic(f"{where}: a term variable is placed directly in the context")
    if len(lhs.compartments) != len(rhs.compartments):
        raise NotStatic(f"{where}: compartments are created or destroyed")
    for members in lhs.classes:
        if len(members) > 1:
            raise NotStatic(f"{where}: identical compartment patterns")
    order = []
    for cp in lhs.compartments:
        hits = [j for j, oc in enumerate(rhs.compartments)
                if oc.content.vars == cp.content_vars and oc.wrap_vars == cp.wrap_vars]
        if len(hits) != 1:
            raise NotStatic(f"{where}: compartment {cp.label} is not kept in place")
        oc = rhs.compartments[hits[0]]
        if oc.label != cp.label:
            raise NotStatic(f"{where}: compartment {cp.label} changes label")
        _static_level(cp.content, oc.content, False, where)
        order.append(hits[0])
    if sorted(order) != list(range(len(order))):
        raise NotStatic(f"{where}: compartment variables are reused")
    return order


def check_static(rules) -> None:
    """Raise :class:`NotStatic` unless every rule only moves atoms."""
    for rule in rules:
        _static_level(rule.lhs, rule.rhs, True, f"rule {rule.name}")


# -- compilation ----------------------------------------------------------

@dataclass
class Network:
    """Flat reaction network plus the compartment tree it was built from."""

    rules: list[Rule]
    root: Compartment
    species: list[tuple[int, str, str]]  # (uid, "c" | "w", atom)
    x0: np.ndarray
    rates: np.ndarray  # per rule
    rule_ptr: np.ndarray  # groups of rule r: rule_ptr[r]:rule_ptr[r+1]
    req_ptr: np.ndarray  # requirement (species, count) lists per group
    req_sp: np.ndarray
    req_n: np.ndarray
    mem_ptr: np.ndarray  # reactions of group g: mem_ptr[g]:mem_ptr[g+1]
    site_uid: np.ndarray  # context compartment of each reaction
    delta_ptr: np.ndarray  # net species change per reaction
    delta_sp: np.ndarray
    delta_v: np.ndarray
    dep_ptr: np.ndarray  # groups to refresh when species s changes
    dep_rx: np.ndarray

    @property
    def n_reactions(self) -> int:
        return int(self.mem_ptr[-1])

    def observable_matrix(self, observables) -> tuple[np.ndarray, np.ndarray]:
        """(species weights, scales): observable k = scale_k * (W[k] @ x)."""
        chains = {}
        stack = [((self.root.label,), self.root)]
        while stack:
            chain, comp = stack.pop()
            chains[comp.uid] = chain
            for child in comp.content.compartments:
                stack.append((chain + (child.label,), child))
        w = np.zeros((len(observables), len(self.species)), dtype=np.int64)
        for k, obs in enumerate(observables):
            glob = LabelGlob(obs.label_glob)
            for s, (uid, where, atom) in enumerate(self.species):
                if atom != obs.atom or not glob.matches(chains[uid]):
                    continue
                if (where == "c" and obs.scope != "wrap") or (where == "w" and obs.scope != "content"):
                    w[k, s] = 1
        return w, np.array([o.scale for o in observables], dtype=float)

    def to_term(self, x) -> Term:
        """The system term for species counts ``x``."""
        counts: dict[tuple[int, str], dict[str, int]] = {}
        for (uid, where, atom), n in zip(self.species, x):
            if n:
                counts.setdefault((uid, where), {})[atom] = int(n)

        def build(comp: Compartment) -> Compartment:
            content = Term(counts.get((comp.uid, "c"), {}),
                           [build(c) for c in comp.content.compartments])
            return Compartment(comp.label, counts.get((comp.uid, "w"), {}), content, comp.uid)

        return build(self.root).content

    def rule_propensities(self, x) -> list[float]:
        out = []
        for r, rule in enumerate(self.rules):
            total = 0
            for g in range(self.rule_ptr[r], self.rule_ptr[r + 1]):
                size = int(self.mem_ptr[g + 1] - self.mem_ptr[g])
                total += size * _mult(x, self.req_sp, self.req_n, self.req_ptr[g], self.req_ptr[g + 1])
            out.append(rule.rate * total)
        return out


def _assignments(pattern: Pattern, comp: Compartment):
    """Injective maps of ``pattern``'s compartment patterns to children of
    ``comp`` (by label only), as lists of (pattern, child, nested)."""
    children = comp.content.compartments
    options = []
    for cp in pattern.compartments:
        opts = []
        for child in children:
            if child.label == cp.label:
                for nested in _assignments(cp.content, child):
                    opts.append((child, nested))
        options.append(opts)
    for combo in itertools.product(*options):
        used = [child.uid for child, _ in combo]
        if len(set(used)) == len(used):
            yield list(zip(pattern.compartments, combo))


class _Builder:
    def __init__(self, rules, init: Term):
        self.rules = list(rules)
        uids = itertools.count(1)
        self.root = Compartment(TOP, None, copy_term(init, lambda: next(uids)), 0)
        self.index: dict[tuple, int] = {}
        self.species: list[tuple[int, str, str]] = []
        self.x0: list[int] = []
        stack = [self.root]
        while stack:
            comp = stack.pop()
            for atom, n in comp.wrap.items():
                self.x0[self.sp(comp.uid, "w", atom)] = n
            for atom, n in comp.content.atoms.items():
                self.x0[self.sp(comp.uid, "c", atom)] = n
            stack.extend(reversed(comp.content.compartments))
        self.by_label: dict[str, list[Compartment]] = {}
        stack = [self.root]
        while stack:
            comp = stack.pop()
            self.by_label.setdefault(comp.label, []).append(comp)
            stack.extend(reversed(comp.content.compartments))

    def sp(self, uid: int, where: str, atom: str) -> int:
        key = (uid, where, atom)
        s = self.index.get(key)
        if s is None:
            s = self.index[key] = len(self.species)
            self.species.append(key)
            self.x0.append(0)
        return s

    def effect(self, comp: Compartment, lhs: Pattern, rhs: OpenTerm, assign, req: dict, delta: dict):
        for atom, n in lhs.atoms:
            s = self.sp(comp.uid, "c", atom)
            req[s] = req.get(s, 0) + n
            delta[s] = delta.get(s, 0) - n
        for atom, n in rhs.atoms:
            s = self.sp(comp.uid, "c", atom)
            delta[s] = delta.get(s, 0) + n
        order = _static_level(lhs, rhs, False, "")
        for k, (cp, (child, nested)) in enumerate(assign):
            oc = rhs.compartments[order[k]]
            for atom, n in cp.wrap_atoms:
                s = self.sp(child.uid, "w", atom)
                req[s] = req.get(s, 0) + n
                delta[s] = delta.get(s, 0) - n
            for atom, n in oc.wrap_atoms:
                s = self.sp(child.uid, "w", atom)
                delta[s] = delta.get(s, 0) + n
            self.effect(child, cp.content, oc.content, nested, req, delta)

    def build(self) -> Network:
        """Reactions of one rule that need the same reactants form a group:
        they share one multiplicity and are chosen uniformly within it."""
        rule_ptr = [0]
        req_ptr, req_sp, req_n, mem_ptr = [0], [], [], [0]
        site_uid, delta_ptr, delta_sp, delta_v = [], [0], [], []
        for rule in self.rules:
            groups: dict[tuple, list] = {}
            for comp in self.by_label.get(rule.context, ()):
                for assign in _assignments(rule.lhs, comp):
                    req: dict[int, int] = {}
                    delta: dict[int, int] = {}
                    self.effect(comp, rule.lhs, rule.rhs, assign, req, delta)
                    key = tuple(sorted(req.items()))
                    groups.setdefault(key, []).append((comp.uid, delta))
            for key, members in groups.items():
                for sp, n in key:
                    req_sp.append(sp)
                    req_n.append(n)
                req_ptr.append(len(req_sp))
                for uid, delta in members:
                    site_uid.append(uid)
                    for sp, v in delta.items():
                        if v:
                            delta_sp.append(sp)
                            delta_v.append(v)
                    delta_ptr.append(len(delta_sp))
                mem_ptr.append(len(site_uid))
            rule_ptr.append(len(req_ptr) - 1)
        deps: list[list[int]] = [[] for _ in self.species]
        for g in range(len(req_ptr) - 1):
            for sp in req_sp[req_ptr[g]:req_ptr[g + 1]]:
                deps[sp].append(g)
        dep_ptr = np.zeros(len(self.species) + 1, dtype=np.int64)
        dep_ptr[1:] = np.cumsum([len(d) for d in deps])
        dep_rx = np.array([g for d in deps for g in d], dtype=np.int64)
        i64 = lambda v: np.array(v, dtype=np.int64)  # noqa: E731
        return Network(self.rules, self.root, self.species, i64(self.x0),
                       np.array([r.rate for r in self.rules], dtype=float), i64(rule_ptr),
                       i64(req_ptr), i64(req_sp), i64(req_n), i64(mem_ptr), i64(site_uid),
                       i64(delta_ptr), i64(delta_sp), i64(delta_v), dep_ptr, dep_rx)


def compile_network(rules, init: Term) -> Network:
    """Flatten a static rule set over ``init``; raises :class:`NotStatic`."""
    check_static(rules)
    return _Builder(rules, init).build()


def _mult(x, req_sp, req_n, lo, hi) -> int:
    m = 1
    for i in range(lo, hi):
        n = int(x[req_sp[i]])
        r = int(req_n[i])
        if n < r:
            return 0
        c = 1
        for k in range(r):
            c = c * (n - k) // (k + 1)
        m *= c
    return m


# -- kernel ----------------------------------------------------------------

def _kernel(x, rates, rule_ptr, req_ptr, req_sp, req_n, mem_ptr, delta_ptr, delta_sp, delta_v,
            dep_ptr, dep_rx, grid, t_end, seed, max_events, samples):
    """Direct-method loop; returns (samples recorded, events, reason code).

    Reason codes: 0 reached t_end, 1 exhausted, 2 event cap.
    """
    n_rules = rates.shape[0]
    n_groups = req_ptr.shape[0] - 1
    h = np.zeros(n_groups, dtype=np.int64)
    wgt = np.zeros(n_groups, dtype=np.int64)  # size * h
    size = np.zeros(n_groups, dtype=np.int64)
    rule_of = np.zeros(n_groups, dtype=np.int64)
    totals = np.zeros(n_rules, dtype=np.int64)
    props = np.zeros(n_rules)
    for r in range(n_rules):
        for g in range(rule_ptr[r], rule_ptr[r + 1]):
            rule_of[g] = r
            size[g] = mem_ptr[g + 1] - mem_ptr[g]
            h[g] = _kmult(x, req_sp, req_n, req_ptr[g], req_ptr[g + 1])
            wgt[g] = size[g] * h[g]
            totals[r] += wgt[g]
        props[r] = rates[r] * totals[r]

    # splitmix64 seeding of xoshiro256**
    s = np.zeros(4, dtype=np.uint64)
    z = np.uint64(seed)
    for k in range(4):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        v = z
        v = (v ^ (v >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        v = (v ^ (v >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        s[k] = v ^ (v >> np.uint64(31))

    n_grid = grid.shape[0]
    i = 0
    t = 0.0
    events = 0
    reason = 0
    a0 = 0.0
    while True:
        # a0 is tracked incrementally and re-summed exactly every 256 events
        # (and before declaring exhaustion) so rounding drift stays bounded
        if events & 255 == 0 or a0 <= 0.0:
            a0 = 0.0
            for r in range(n_rules):
                a0 += props[r]
            if a0 == 0.0:
                reason = 1
                break
        u = 0.0
        while u == 0.0:
            u = _uniform(s)
        t_next = t - np.log(u) / a0
        while i < n_grid and grid[i] < t_next:
            samples[i, :] = x
            i += 1
        if t_next > t_end:
            reason = 0
            break
        if events >= max_events:
            reason = 2
            break
        t = t_next
        # rule by threshold scan, then group by multiplicity, then a member
        threshold = _uniform(s) * a0
        acc = 0.0
        chosen = -1
        for r in range(n_rules):
            if props[r] != 0.0:
                acc += props[r]
                chosen = r
                if threshold < acc:
                    break
        k = _below(s, totals[chosen])
        g = rule_ptr[chosen]
        while k >= wgt[g]:
            k -= wgt[g]
            g += 1
        j = mem_ptr[g] + k // h[g]
        for q in range(delta_ptr[j], delta_ptr[j + 1]):
            sp = delta_sp[q]
            x[sp] += delta_v[q]
            for p in range(dep_ptr[sp], dep_ptr[sp + 1]):
                gg = dep_rx[p]
                m = _kmult(x, req_sp, req_n, req_ptr[gg], req_ptr[gg + 1])
                if m != h[gg]:
                    r = rule_of[gg]
                    w = size[gg] * m
                    totals[r] += w - wgt[gg]
                    wgt[gg] = w
                    h[gg] = m
                    a = rates[r] * totals[r]
                    a0 += a - props[r]
                    props[r] = a
        events += 1
    if reason != 2:
        while i < n_grid:
            samples[i, :] = x
            i += 1
    return i, events, reason


def _kmult(x, req_sp, req_n, lo, hi):
    m = 1
    for i in range(lo, hi):
        n = x[req_sp[i]]
        r = req_n[i]
        if n < r:
            return 0
        if r == 1:
            m *= n
        elif r == 2:
            m *= (n * (n - 1)) >> 1
        else:
            c = 1
            for k in range(r):
                c = c * (n - k) // (k + 1)
            m *= c
    return m


def _rotl(v, k):
    return (v << np.uint64(k)) | (v >> np.uint64(64 - k))


def _next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def _uniform(s):
    return float(_next(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def _below(s, n):
    """Integer in [0, n) from one 53-bit uniform.

    The bias is at most n / 2**53, far below anything a propensity total
    reaches.
    """
    k = np.int64(_uniform(s) * n)
    return k if k < n else n - 1


if numba is not None:
    _rotl = numba.njit(cache=True, inline="always")(_rotl)
    _next = numba.njit(cache=True, inline="always")(_next)
    _uniform = numba.njit(cache=True, inline="always")(_uniform)
    _below = numba.njit(cache=True, inline="always")(_below)
    _kmult = numba.njit(cache=True, inline="always")(_kmult)
    _kernel = numba.njit(cache=True)(_kernel)


REASONS = ("reached_t_end", "exhausted", "event_cap")


def run(net: Network, grid, t_end: float, seed: int, max_events: int):
    """Returns (species counts per sample, events, reason)."""
    x = net.x0.copy()
    samples = np.zeros((len(grid), len(net.species)), dtype=np.int64)
    n, events, code = _kernel(x, net.rates, net.rule_ptr, net.req_ptr, net.req_sp, net.req_n,
                              net.mem_ptr, net.delta_ptr, net.delta_sp, net.delta_v, net.dep_ptr, net.dep_rx,
                              np.asarray(grid, dtype=float), float(t_end), np.uint64(seed),
                              int(max_events), samples)
    return samples[:n], int(events), REASONS[code]
