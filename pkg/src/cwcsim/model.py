"""Expanded models: rules, initial term, observables and defaults."""

from __future__ import annotations

from dataclasses import dataclass, field

from .patterns import Rule
from .terms import SCOPES, LabelGlob, Term, as_root


@dataclass(frozen=True)
class Observable:
    """``scale * count(atom in compartments matching label_glob)``."""

    name: str
    atom: str
    label_glob: str
    scope: str = "content"
    scale: float = 1.0

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        LabelGlob(self.label_glob)


def evaluate_observables(observables, system) -> list[float]:
    """Values of all ``observables`` in one traversal of ``system``."""
    if not observables:
        return []
    globs = [LabelGlob(o.label_glob) for o in observables]
    counts = [0] * len(observables)
    root = as_root(system)
    stack = [((root.label,), root)]
    while stack:
        chain, comp = stack.pop()
        for i, (obs, glob) in enumerate(zip(observables, globs)):
            if glob.matches(chain):
                if obs.scope != "wrap":
                    counts[i] += comp.content.atoms.get(obs.atom, 0)
                if obs.scope != "content":
                    counts[i] += comp.wrap.get(obs.atom, 0)
        for child in comp.content.compartments:
            stack.append((chain + (child.label,), child))
    return [c if o.scale == 1.0 else c * o.scale for c, o in zip(counts, observables)]


@dataclass
class Model:
    name: str
    rules: list[Rule]
    init: Term
    observables: list[Observable] = field(default_factory=list)
    defaults: dict[str, float] = field(default_factory=dict)
    params: dict[str, float] = field(default_factory=dict)

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        return (self.rules == other.rules and self.init == other.init
                and self.observables == other.observables
                and self.defaults == other.defaults and self.params == other.params)
