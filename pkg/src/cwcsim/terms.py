"""Terms of the Calculus of Wrapped Compartments.

A term is a multiset of atoms and compartments.  A compartment has a wrap
(atoms only), a content (a term) and a label.  The whole system is the
content of an implicit ``top`` compartment with an empty wrap.

Terms are plain mutable containers so the simulator can rewrite them in
place; outside a simulation step they are treated as values.  Equality and
hashing go through :func:`canonical_key` and ignore compartment identifiers.
"""

from __future__ import annotations

import itertools
import re
from collections.abc import Iterable, Iterator, Mapping

TOP = "top"
IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_uids = itertools.count(1)


class WrapContainsCompartment(ValueError):
    """A compartment was placed on a wrap."""


class PathError(LookupError):
    """A path does not resolve to a compartment."""


def fresh_uid() -> int:
    return next(_uids)


class Term:
    """Multiset of atoms (name -> positive count) and compartments."""

    __slots__ = ("atoms", "compartments")

    def __init__(self, atoms: Mapping[str, int] | None = None,
                 compartments: Iterable[Compartment] | None = None):
        self.atoms: dict[str, int] = {a: n for a, n in (atoms or {}).items() if n}
        self.compartments: list[Compartment] = list(compartments or ())

    def is_empty(self) -> bool:
        return not self.atoms and not self.compartments

    def atom_count(self) -> int:
        return sum(self.atoms.values())

    def __eq__(self, other):
        if not isinstance(other, Term):
            return NotImplemented
        return canonical_key(self) == canonical_key(other)

    def __hash__(self):
        return hash(canonical_key(self))

    def __repr__(self):
        return f"Term({format_term(self)!r})"


class Compartment:
    """A wrapped, labelled container.

    ``uid`` is a creation-order identifier used to address the compartment
    while a term is being rewritten; it never takes part in equality.
    ``parent`` is only maintained by the simulator.
    """

    __slots__ = ("label", "wrap", "content", "uid", "parent")

    def __init__(self, label: str, wrap: Mapping[str, int] | None = None,
                 content: Term | None = None, uid: int | None = None):
        if isinstance(wrap, (Term, Compartment)):
            raise WrapContainsCompartment(f"wrap of {label!r} must hold atoms only")
        self.label = label
        self.wrap: dict[str, int] = {a: n for a, n in (wrap or {}).items() if n}
        self.content = content if content is not None else Term()
        self.uid = fresh_uid() if uid is None else uid
        self.parent: Compartment | None = None

    def __eq__(self, other):
        if not isinstance(other, Compartment):
            return NotImplemented
        return compartment_key(self) == compartment_key(other)

    def __hash__(self):
        return hash(compartment_key(self))

    def __repr__(self):
        return f"Compartment({format_compartment(self)!r})"


def canonical_key(term: Term) -> tuple:
    return (tuple(sorted(term.atoms.items())),
            tuple(sorted(compartment_key(c) for c in term.compartments)))


def compartment_key(comp: Compartment) -> tuple:
    return (comp.label, tuple(sorted(comp.wrap.items())), canonical_key(comp.content))


def term_eq(lhs: Term, rhs: Term) -> bool:
    return canonical_key(lhs) == canonical_key(rhs)


def _add(counter: dict[str, int], name: str, n: int = 1) -> None:
    counter[name] = counter.get(name, 0) + n


def normalize(raw) -> Term:
    """Build a canonical :class:`Term` from a nested structure.

    ``raw`` is an existing :class:`Term` or :class:`Compartment`, or an
    iterable whose items are

    * an atom name (``"a"``),
    * ``(n, item)`` for ``n`` copies of ``item``,
    * ``(wrap, content, label)`` for a compartment, where ``wrap`` is an
      iterable of atom names (or ``(n, name)`` pairs) and ``content`` is
      itself raw.

    Atoms are ordered by name and compartments by label then recursive
    content, so iteration over a normalized term is reproducible.
    """
    if isinstance(raw, Term):
        return _canonical_copy(raw)
    if isinstance(raw, Compartment):
        return Term(compartments=[_canonical_comp(raw)])
    if raw is None:
        return Term()
    atoms: dict[str, int] = {}
    comps: list[Compartment] = []
    for item in ([raw] if isinstance(raw, str) else raw):
        _collect(item, 1, atoms, comps)
    return _sorted_term(atoms, comps)


def _collect(item, times: int, atoms: dict, comps: list) -> None:
    if isinstance(item, str):
        _check_name(item)
        _add(atoms, item, times)
    elif isinstance(item, Compartment):
        comps.extend(_canonical_comp(item) for _ in range(times))
    elif isinstance(item, Term):
        for a, n in item.atoms.items():
            _add(atoms, a, n * times)
        for c in item.compartments:
            comps.extend(_canonical_comp(c) for _ in range(times))
    elif isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], int):
        if item[0] < 0:
            raise ValueError(f"negative repetition count {item[0]}")
        _collect(item[1], times * item[0], atoms, comps)
    elif isinstance(item, tuple) and len(item) == 3:
        wrap_raw, content_raw, label = item
        _check_name(label)
        wrap: dict[str, int] = {}
        for w in ([wrap_raw] if isinstance(wrap_raw, str) else (wrap_raw or ())):
            if isinstance(w, tuple) and len(w) == 2 and isinstance(w[0], int) and isinstance(w[1], str):
                _check_name(w[1])
                _add(wrap, w[1], w[0])
            elif isinstance(w, str):
                _check_name(w)
                _add(wrap, w)
            else:
                raise WrapContainsCompartment(f"wrap of {label!r} holds {w!r}")
        content = normalize(content_raw)
        for _ in range(times):
            comps.append(Compartment(label, wrap, copy_term(content)))
    else:
        raise TypeError(f"cannot interpret {item!r} as a term element")


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not IDENTIFIER.match(name):
        raise ValueError(f"invalid atom or label name {name!r}")


def _sorted_term(atoms: dict, comps: list) -> Term:
    term = Term(dict(sorted((a, n) for a, n in atoms.items() if n)))
    term.compartments = sorted(comps, key=compartment_key)
    return term


def _canonical_comp(comp: Compartment) -> Compartment:
    if any(not isinstance(a, str) for a in comp.wrap):
        raise WrapContainsCompartment(f"wrap of {comp.label!r} holds a compartment")
    return Compartment(comp.label, dict(sorted(comp.wrap.items())), _canonical_copy(comp.content))


def _canonical_copy(term: Term) -> Term:
    return _sorted_term(term.atoms, [_canonical_comp(c) for c in term.compartments])


def copy_term(term: Term, uid=None) -> Term:
    """Deep copy with fresh compartment identifiers (``uid`` is a factory)."""
    new_uid = uid or fresh_uid
    return Term(term.atoms, [copy_compartment(c, new_uid) for c in term.compartments])


def copy_compartment(comp: Compartment, uid=None) -> Compartment:
    new_uid = uid or fresh_uid
    return Compartment(comp.label, comp.wrap, copy_term(comp.content, new_uid), new_uid())


def canonicalize_in_place(term: Term) -> Term:
    """Re-sort atoms and compartments recursively, keeping identifiers."""
    term.atoms = dict(sorted((a, n) for a, n in term.atoms.items() if n))
    for c in term.compartments:
        c.wrap = dict(sorted((a, n) for a, n in c.wrap.items() if n))
        canonicalize_in_place(c.content)
    term.compartments.sort(key=compartment_key)
    return term


# -- roots and paths -----------------------------------------------------

def as_root(system) -> Compartment:
    """The ``top`` compartment enclosing ``system`` (uid 0 when synthesized)."""
    if isinstance(system, Compartment):
        if system.label != TOP or system.wrap:
            raise ValueError("a root compartment must be labelled top with an empty wrap")
        return system
    return Compartment(TOP, None, system, uid=0)


def walk(system) -> Iterator[tuple[tuple[int, ...], Compartment]]:
    """Depth-first (path, compartment) pairs, root first."""
    root = as_root(system)
    stack = [((), root)]
    while stack:
        path, comp = stack.pop()
        yield path, comp
        for child in reversed(comp.content.compartments):
            stack.append((path + (child.uid,), child))


def resolve(system, path: Iterable[int]) -> Compartment:
    comp = as_root(system)
    for uid in path:
        for child in comp.content.compartments:
            if child.uid == uid:
                comp = child
                break
        else:
            raise PathError(f"no compartment {uid} under {comp.label!r}")
    return comp


def collect_compartments(system, label: str) -> list[tuple[int, ...]]:
    """Paths of every compartment labelled ``label``, depth-first."""
    return [path for path, comp in walk(system) if comp.label == label]


def count_compartments(system, label_glob: str) -> int:
    matcher = LabelGlob(label_glob)
    return sum(1 for _, chain in _walk_chains(as_root(system)) if matcher.matches(chain))


# -- counting ------------------------------------------------------------

class LabelGlob:
    """Label filter: ``*`` is allowed as a suffix of each segment.

    ``a/b`` selects ``b``-compartments directly inside ``a``-compartments.
    """

    def __init__(self, pattern: str):
        if not pattern:
            raise ValueError("empty label pattern")
        self.pattern = pattern
        self.segments = []
        for seg in pattern.split("/"):
            if "*" in seg[:-1] or not seg:
                raise ValueError(f"bad label pattern {pattern!r}: '*' only as a suffix")
            self.segments.append((seg[:-1], True) if seg.endswith("*") else (seg, False))

    def _seg(self, seg, label: str) -> bool:
        text, prefix = seg
        return label.startswith(text) if prefix else label == text

    def matches(self, chain: tuple[str, ...]) -> bool:
        """``chain`` lists labels from the root down to the compartment."""
        if len(chain) < len(self.segments):
            return False
        tail = chain[len(chain) - len(self.segments):]
        return all(self._seg(s, lab) for s, lab in zip(self.segments, tail))

    def __repr__(self):
        return f"LabelGlob({self.pattern!r})"


def _walk_chains(root: Compartment):
    stack = [((root.label,), root)]
    while stack:
        chain, comp = stack.pop()
        yield comp, chain
        for child in comp.content.compartments:
            stack.append((chain + (child.label,), child))


SCOPES = ("content", "wrap", "both")


def count_atom(system, atom: str, label_filter: str = "*", scope: str = "content") -> int:
    """Occurrences of ``atom`` in compartments matching ``label_filter``."""
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    matcher = LabelGlob(label_filter)
    total = 0
    for comp, chain in _walk_chains(as_root(system)):
        if matcher.matches(chain):
            if scope != "wrap":
                total += comp.content.atoms.get(atom, 0)
            if scope != "content":
                total += comp.wrap.get(atom, 0)
    return total


# -- surface syntax ------------------------------------------------------

def _format_multiset(atoms: Mapping[str, int]) -> list[str]:
    return [a if n == 1 else f"{n}*{a}" for a, n in sorted(atoms.items())]


def format_compartment(comp: Compartment) -> str:
    wrap = " ".join(_format_multiset(comp.wrap))
    content = format_term(comp.content)
    return f"({wrap} | {content})^{comp.label}"


def format_term(term: Term) -> str:
    parts = _format_multiset(term.atoms)
    groups: dict[tuple, list[Compartment]] = {}
    for c in term.compartments:
        groups.setdefault(compartment_key(c), []).append(c)
    for key in sorted(groups):
        comps = groups[key]
        text = format_compartment(comps[0])
        parts.append(text if len(comps) == 1 else f"{len(comps)}*{text}")
    return " ".join(parts)
