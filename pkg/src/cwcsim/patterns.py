"""Rules, pattern matching and rewriting.

A rule ``ctx: lhs -> [k] rhs`` fires inside any compartment labelled
``ctx``.  The left side is a multiset of atoms and compartment patterns;
every compartment pattern carries exactly one wrap variable (``~x``) and
one content variable (``$X``).  The rest of the context content is bound
to an implicit variable and left untouched.

Counting follows mass action: ``r`` identical atoms out of ``n`` give
``C(n, r)`` choices, and identical compartment patterns are assigned to
unordered sets of distinct child compartments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb, prod

from .terms import (
    TOP,
    Compartment,
    Term,
    as_root,
    canonicalize_in_place,
    copy_term,
    fresh_uid,
    resolve,
    walk,
)


class StaleBinding(LookupError):
    """The bound reactants are no longer present in the system."""


class IndexOutOfRange(IndexError):
    pass


def _pairs(counts) -> tuple[tuple[str, int], ...]:
    if isinstance(counts, dict):
        counts = counts.items()
    merged: dict[str, int] = {}
    for name, n in counts:
        merged[name] = merged.get(name, 0) + n
    return tuple(sorted((a, n) for a, n in merged.items() if n))


# -- patterns ------------------------------------------------------------

@dataclass(frozen=True)
class Pattern:
    """Multiset of simple patterns (atoms and compartment patterns)."""

    atoms: tuple[tuple[str, int], ...] = ()
    compartments: tuple[CompartmentPattern, ...] = ()
    classes: tuple[tuple[int, ...], ...] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", _pairs(self.atoms))
        object.__setattr__(self, "compartments", tuple(self.compartments))
        groups: dict[tuple, list[int]] = {}
        for i, cp in enumerate(self.compartments):
            groups.setdefault(cp.shape, []).append(i)
        object.__setattr__(self, "classes", tuple(tuple(g) for g in groups.values()))

    @property
    def shape(self) -> tuple:
        return (self.atoms, tuple(sorted(cp.shape for cp in self.compartments)))

    def depth(self) -> int:
        return max((1 + cp.content.depth() for cp in self.compartments), default=0)


@dataclass(frozen=True)
class CompartmentPattern:
    label: str
    wrap_atoms: tuple[tuple[str, int], ...] = ()
    wrap_vars: tuple[str, ...] = ()
    content: Pattern = Pattern()
    content_vars: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "wrap_atoms", _pairs(self.wrap_atoms))
        object.__setattr__(self, "wrap_vars", tuple(self.wrap_vars))
        object.__setattr__(self, "content_vars", tuple(self.content_vars))

    @property
    def shape(self) -> tuple:
        # variable names do not distinguish otherwise identical patterns
        return (self.label, self.wrap_atoms, self.content.shape)

    @property
    def wrap_var(self) -> str:
        return self.wrap_vars[0]

    @property
    def content_var(self) -> str:
        return self.content_vars[0]


@dataclass(frozen=True)
class OpenTerm:
    """Right-hand side: atoms, term variables and open compartments."""

    atoms: tuple[tuple[str, int], ...] = ()
    vars: tuple[str, ...] = ()
    compartments: tuple[OpenCompartment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", _pairs(self.atoms))
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "compartments", tuple(self.compartments))


@dataclass(frozen=True)
class OpenCompartment:
    label: str
    wrap_atoms: tuple[tuple[str, int], ...] = ()
    wrap_vars: tuple[str, ...] = ()
    content: OpenTerm = OpenTerm()

    def __post_init__(self):
        object.__setattr__(self, "wrap_atoms", _pairs(self.wrap_atoms))
        object.__setattr__(self, "wrap_vars", tuple(self.wrap_vars))


@dataclass(frozen=True)
class Rule:
    name: str
    context: str
    lhs: Pattern
    rhs: OpenTerm
    rate: float


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str

    def __str__(self):
        return f"{self.kind}: {self.message}"


def _pattern_vars(pattern: Pattern, wrap: list, term: list) -> None:
    for cp in pattern.compartments:
        wrap.extend(cp.wrap_vars)
        term.extend(cp.content_vars)
        _pattern_vars(cp.content, wrap, term)


def _open_vars(open_term: OpenTerm, wrap: list, term: list) -> None:
    term.extend(open_term.vars)
    for oc in open_term.compartments:
        wrap.extend(oc.wrap_vars)
        _open_vars(oc.content, wrap, term)


def _linearity(pattern: Pattern, where: str, out: list) -> None:
    for cp in pattern.compartments:
        here = f"{where}/({cp.label})"
        if len(cp.wrap_vars) != 1:
            out.append(Violation("Linearity", f"compartment pattern {here} has "
                                 f"{len(cp.wrap_vars)} wrap variables, expected exactly one"))
        if len(cp.content_vars) != 1:
            out.append(Violation("Linearity", f"compartment pattern {here} has "
                                 f"{len(cp.content_vars)} content variables, expected exactly one"))
        _linearity(cp.content, here, out)


def validate_rule(rule: Rule) -> list[Violation]:
    """Problems with ``rule``; an empty list means the rule is valid."""
    out: list[Violation] = []
    if not rule.rate > 0:
        out.append(Violation("NonPositiveRate", f"rule {rule.name}: rate {rule.rate} is not positive"))
    _linearity(rule.lhs, rule.context, out)
    lw: list[str] = []
    lt: list[str] = []
    _pattern_vars(rule.lhs, lw, lt)
    for name in sorted({v for v in lw + lt if (lw + lt).count(v) > 1}):
        out.append(Violation("DuplicateVariable", f"rule {rule.name}: variable {name} occurs more "
                             "than once on the left-hand side"))
    for name in sorted(set(lw) & set(lt)):
        out.append(Violation("VariableKind", f"rule {rule.name}: {name} is used both as wrap and term variable"))
    rw: list[str] = []
    rt: list[str] = []
    _open_vars(rule.rhs, rw, rt)
    for name in sorted(set(rw) - set(lw)):
        out.append(Violation("UnboundVariable", f"rule {rule.name}: wrap variable ~{name} is not bound "
                             "on the left-hand side"))
    for name in sorted(set(rt) - set(lt)):
        out.append(Violation("UnboundVariable", f"rule {rule.name}: term variable ${name} is not bound "
                             "on the left-hand side"))
    return out


# -- counting ------------------------------------------------------------

def _atom_choices(required, available: dict) -> int:
    m = 1
    for name, r in required:
        n = available.get(name, 0)
        if n < r:
            return 0
        m *= n if r == 1 else comb(n, r)
    return m


def inner_weight(cp: CompartmentPattern, comp: Compartment) -> int:
    """Ways ``cp`` matches the single compartment ``comp``."""
    if comp.label != cp.label:
        return 0
    w = _atom_choices(cp.wrap_atoms, comp.wrap) if cp.wrap_atoms else 1
    if w:
        w *= multiplicity(cp.content, comp.content)
    return w


def multiplicity(pattern: Pattern, content: Term) -> int:
    """Number of distinct reactant selections of ``pattern`` in ``content``."""
    m = _atom_choices(pattern.atoms, content.atoms) if pattern.atoms else 1
    if m and pattern.compartments:
        m *= _count_assignments(pattern, content.compartments)
    return m


def _class_weights(pattern: Pattern, children) -> list[tuple[int, list[int]]]:
    out = []
    for members in pattern.classes:
        cp = pattern.compartments[members[0]]
        out.append((len(members), [inner_weight(cp, ch) for ch in children]))
    return out


def _count_assignments(pattern: Pattern, children) -> int:
    classes = _class_weights(pattern, children)
    if len(classes) == 1:
        size, w = classes[0]
        if size == 1:
            return sum(w)
        if size == 2:
            s = sum(w)
            return (s * s - sum(x * x for x in w)) // 2
    elif len(classes) == 2 and classes[0][0] == 1 and classes[1][0] == 1:
        wa, wb = classes[0][1], classes[1][1]
        return sum(wa) * sum(wb) - sum(a * b for a, b in zip(wa, wb))
    return _count_rest(classes, 0, frozenset())


def _count_rest(classes, ci: int, used: frozenset) -> int:
    if ci == len(classes):
        return 1
    size, w = classes[ci]
    avail = [j for j, x in enumerate(w) if x and j not in used]
    total = 0
    for combo in combinations(avail, size):
        total += prod(w[j] for j in combo) * _count_rest(classes, ci + 1, used | set(combo))
    return total


# -- selection -----------------------------------------------------------

@dataclass(frozen=True)
class Selection:
    """One concrete reactant choice.

    ``atoms`` holds ``(name, occurrence indices)``; ``compartments`` holds
    ``(pattern index, child, wrap picks, inner selection)``.
    """

    atoms: tuple
    compartments: tuple


def _unrank_combination(n: int, r: int, index: int) -> tuple[int, ...]:
    out = []
    start = 0
    for k in range(r, 0, -1):
        for i in range(start, n):
            block = comb(n - i - 1, k - 1)
            if index < block:
                out.append(i)
                start = i + 1
                break
            index -= block
    return tuple(out)


def _unrank_atoms(required, available: dict, index: int) -> tuple:
    picks = []
    for name, r in required:
        n = available[name]
        radix = comb(n, r)
        index, sub = divmod(index, radix)
        picks.append((name, _unrank_combination(n, r, sub)))
    return tuple(picks)


def select(pattern: Pattern, content: Term, index: int) -> Selection:
    """The ``index``-th selection in canonical enumeration order.

    Caller guarantees ``0 <= index < multiplicity(pattern, content)``.
    """
    a = _atom_choices(pattern.atoms, content.atoms) if pattern.atoms else 1
    comp_index, atom_index = divmod(index, a)
    atoms = _unrank_atoms(pattern.atoms, content.atoms, atom_index)
    if not pattern.compartments:
        return Selection(atoms, ())
    children = content.compartments
    classes = _class_weights(pattern, children)
    chosen = _unrank_rest(classes, 0, frozenset(), comp_index)
    picks = []
    for ci, combo, inner in chosen:
        members = pattern.classes[ci]
        for member, j, sub in zip(members, combo, inner):
            cp = pattern.compartments[member]
            child = children[j]
            wsize = _atom_choices(cp.wrap_atoms, child.wrap) if cp.wrap_atoms else 1
            content_index, wrap_index = divmod(sub, wsize)
            wrap_picks = _unrank_atoms(cp.wrap_atoms, child.wrap, wrap_index)
            picks.append((member, child, wrap_picks, select(cp.content, child.content, content_index)))
    picks.sort(key=lambda p: p[0])
    return Selection(atoms, tuple(picks))


def _unrank_rest(classes, ci: int, used: frozenset, index: int) -> list:
    if ci == len(classes):
        return []
    size, w = classes[ci]
    avail = [j for j, x in enumerate(w) if x and j not in used]
    for combo in combinations(avail, size):
        weights = [w[j] for j in combo]
        rest_used = used | set(combo)
        rest = _count_rest(classes, ci + 1, rest_used)
        block = prod(weights) * rest
        if index < block:
            inner_index, rest_index = divmod(index, rest)
            inner = []
            for x in weights:
                inner_index, sub = divmod(inner_index, x)
                inner.append(sub)
            return [(ci, combo, inner)] + _unrank_rest(classes, ci + 1, rest_used, rest_index)
        index -= block
    raise IndexOutOfRange("selection index exceeds the number of assignments")


# -- sites and bindings --------------------------------------------------

@dataclass(frozen=True)
class MatchSite:
    context_path: tuple[int, ...]
    multiplicity: int


def enumerate_sites(rule: Rule, system) -> list[MatchSite]:
    """Every ``rule.context`` compartment where the rule can fire."""
    sites = []
    for path, comp in walk(system):
        if comp.label == rule.context:
            m = multiplicity(rule.lhs, comp.content)
            if m:
                sites.append(MatchSite(path, m))
    return sites


@dataclass(frozen=True)
class Binding:
    """A concrete application of ``rule`` at ``context_path``.

    ``assignments`` maps each left-hand compartment pattern (by position,
    nested positions joined into a tuple) to the identifier of the child
    compartment it consumes.
    """

    rule: Rule
    context_path: tuple[int, ...]
    index: int
    selection: Selection

    @property
    def assignments(self) -> dict[tuple[int, ...], int]:
        out: dict[tuple[int, ...], int] = {}

        def visit(sel: Selection, prefix):
            for member, child, _, inner in sel.compartments:
                out[prefix + (member,)] = child.uid
                visit(inner, prefix + (member,))
        visit(self.selection, ())
        return out

    def variables(self) -> tuple[dict[str, dict[str, int]], dict[str, Term]]:
        """Wrap and term variable instantiations (copies)."""
        wraps: dict[str, dict[str, int]] = {}
        terms: dict[str, Term] = {}

        def visit(pattern: Pattern, sel: Selection):
            for member, child, _, inner in sel.compartments:
                cp = pattern.compartments[member]
                rest = dict(child.wrap)
                for name, r in cp.wrap_atoms:
                    rest[name] -= r
                wraps[cp.wrap_var] = {a: n for a, n in rest.items() if n}
                taken = {id(c) for _, c, _, _ in inner.compartments}
                atoms = dict(child.content.atoms)
                for name, r in cp.content.atoms:
                    atoms[name] -= r
                kept = [c for c in child.content.compartments if id(c) not in taken]
                terms[cp.content_var] = copy_term(Term(atoms, kept))
                visit(cp.content, inner)
        visit(self.rule.lhs, self.selection)
        return wraps, terms

    def reactants(self) -> tuple:
        """Hashable description of the consumed occurrences."""
        def describe(sel: Selection):
            return (sel.atoms, tuple((m, c.uid, w, describe(i)) for m, c, w, i in sel.compartments))
        return describe(self.selection)


def select_reactants(rule: Rule, site: MatchSite, system, index: int) -> Binding:
    ctx = resolve(system, site.context_path)
    total = multiplicity(rule.lhs, ctx.content)
    if not 0 <= index < total:
        raise IndexOutOfRange(f"index {index} outside [0, {total})")
    return Binding(rule, tuple(site.context_path), index, select(rule.lhs, ctx.content, index))


# -- rewriting -----------------------------------------------------------

@dataclass
class Change:
    """What a rewrite touched, for incremental propensity updates."""

    context: Compartment
    atoms: set[str]
    structural: bool
    fresh: list[Compartment]
    removed: list[Compartment]


def _take(counter: dict, name: str, n: int) -> None:
    left = counter.get(name, 0) - n
    if left < 0:
        raise StaleBinding(f"not enough {name}")
    if left:
        counter[name] = left
    else:
        del counter[name]


def _detach(siblings: list, child: Compartment) -> None:
    for i, c in enumerate(siblings):
        if c is child:
            del siblings[i]
            return
    raise StaleBinding(f"compartment {child.uid} is no longer present")


def _subtree(term: Term):
    stack = list(term.compartments)
    while stack:
        c = stack.pop()
        yield c
        stack.extend(c.content.compartments)


def rewrite(ctx: Compartment, rule: Rule, sel: Selection, new_uid=fresh_uid) -> Change:
    """Apply ``rule`` inside ``ctx`` in place, consuming ``sel``."""
    content = ctx.content
    changed: set[str] = set()
    wraps: dict[str, list] = {}
    terms: dict[str, list] = {}
    matched: list[Compartment] = []

    def consume(target: Term, pattern: Pattern, s: Selection, track: bool):
        for name, r in pattern.atoms:
            _take(target.atoms, name, r)
            if track:
                changed.add(name)
        for member, child, _, inner in s.compartments:
            cp = pattern.compartments[member]
            _detach(target.compartments, child)
            for name, r in cp.wrap_atoms:
                _take(child.wrap, name, r)
            consume(child.content, cp.content, inner, False)
            wraps[cp.wrap_vars[0]] = [child.wrap, False]
            terms[cp.content_vars[0]] = [child.content, child, False]
            matched.append(child)

    consume(content, rule.lhs, sel, True)

    fresh: list[Compartment] = []
    reused: set[int] = set()

    def take_term(var: str) -> Term:
        entry = terms[var]
        if entry[2]:
            copy = copy_term(entry[0], new_uid)
            fresh.extend(_subtree(copy))
            return copy
        entry[2] = True
        return entry[0]

    def take_wrap(var: str) -> dict:
        entry = wraps[var]
        if entry[1]:
            return dict(entry[0])
        entry[1] = True
        return entry[0]

    def merge(into: Term, parent: Compartment, source: Term, track: bool):
        for name, n in source.atoms.items():
            into.atoms[name] = into.atoms.get(name, 0) + n
            if track:
                changed.add(name)
        for c in source.compartments:
            c.parent = parent
            into.compartments.append(c)

    def fill(comp: Compartment, open_term: OpenTerm, skip: str | None):
        target = comp.content
        for name, n in open_term.atoms:
            target.atoms[name] = target.atoms.get(name, 0) + n
        for var in open_term.vars:
            if var != skip:
                merge(target, comp, take_term(var), False)
            else:
                skip = None
        for oc in open_term.compartments:
            child = build(oc)
            child.parent = comp
            target.compartments.append(child)

    def build(oc: OpenCompartment) -> Compartment:
        owner = None
        for var in oc.content.vars:
            entry = terms[var]
            if not entry[2] and entry[1].uid not in reused:
                owner, use = entry[1], var
                break
        if owner is not None:
            reused.add(owner.uid)
            comp = owner
            comp.content = take_term(use)
        else:
            comp, use = Compartment(oc.label, None, Term(), new_uid()), None
        comp.label = oc.label
        wrap: dict[str, int] = {}
        for var in oc.wrap_vars:
            for name, n in take_wrap(var).items():
                wrap[name] = wrap.get(name, 0) + n
        for name, n in oc.wrap_atoms:
            wrap[name] = wrap.get(name, 0) + n
        comp.wrap = wrap
        fill(comp, oc.content, use)
        fresh.append(comp)
        return comp

    rhs = rule.rhs
    for name, n in rhs.atoms:
        content.atoms[name] = content.atoms.get(name, 0) + n
        changed.add(name)
    structural = bool(matched) or bool(rhs.compartments)
    for var in rhs.vars:
        moved = take_term(var)
        structural = structural or bool(moved.compartments)
        merge(content, ctx, moved, True)
    for oc in rhs.compartments:
        child = build(oc)
        child.parent = ctx
        content.compartments.append(child)

    removed = [c for c in matched if c.uid not in reused]
    for entry in terms.values():
        if not entry[2]:
            removed.extend(_subtree(entry[0]))
    return Change(ctx, changed, structural, fresh, removed)


def _clone(term: Term) -> Term:
    """Deep copy keeping compartment identifiers."""
    return Term(term.atoms, [Compartment(c.label, c.wrap, _clone(c.content), c.uid)
                             for c in term.compartments])


def _rebind(pattern: Pattern, content: Term, sel: Selection) -> Selection:
    for name, picks in sel.atoms:
        if content.atoms.get(name, 0) <= max(picks, default=-1):
            raise StaleBinding(f"atom {name} no longer available")
    by_uid = {c.uid: c for c in content.compartments}
    picks = []
    for member, child, wrap_picks, inner in sel.compartments:
        here = by_uid.get(child.uid)
        cp = pattern.compartments[member]
        if here is None or here.label != cp.label:
            raise StaleBinding(f"compartment {child.uid} is no longer present")
        for name, occ in wrap_picks:
            if here.wrap.get(name, 0) <= max(occ, default=-1):
                raise StaleBinding(f"wrap atom {name} no longer available")
        picks.append((member, here, wrap_picks, _rebind(cp.content, here.content, inner)))
    return Selection(sel.atoms, tuple(picks))


def apply_rule(system, rule: Rule, binding: Binding) -> Term:
    """Return the system after firing ``binding``; ``system`` is unchanged."""
    root = as_root(system)
    clone = Compartment(TOP, None, _clone(root.content), root.uid)
    try:
        ctx = resolve(clone, binding.context_path)
    except LookupError as exc:
        raise StaleBinding(str(exc)) from None
    if ctx.label != rule.context:
        raise StaleBinding(f"context {ctx.label!r} does not match rule context {rule.context!r}")
    rewrite(ctx, rule, _rebind(rule.lhs, ctx.content, binding.selection))
    return canonicalize_in_place(clone.content)
