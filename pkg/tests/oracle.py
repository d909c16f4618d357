"""Brute-force reference counts and random instance generators.

The oracle never uses binomials or the weight tables of the matcher.  It
lists every concrete reactant selection (individual atom occurrences and
injective pattern-to-child maps) and deduplicates the maps that only
permute identical compartment patterns.
"""

from itertools import combinations, permutations, product

from cwcsim.patterns import CompartmentPattern, OpenTerm, Pattern, Rule
from cwcsim.terms import Compartment, Term, as_root

SPECIES = ("a", "b", "c", "d", "e")
LABELS = ("m", "n")


def _occurrences(atoms):
    return [(name, k) for name, n in sorted(atoms.items()) for k in range(n)]


def atom_selections(required, atoms):
    """Sets of atom occurrences holding exactly the required counts."""
    need = dict(required)
    size = sum(need.values())
    out = []
    for combo in combinations(_occurrences(atoms), size):
        got = {}
        for name, _ in combo:
            got[name] = got.get(name, 0) + 1
        if got == need:
            out.append(frozenset(combo))
    return out


def shape(cp):
    """Identity of a compartment pattern up to variable names."""
    return (cp.label, tuple(sorted(cp.wrap_atoms)), pattern_shape(cp.content))


def pattern_shape(p):
    return (tuple(sorted(p.atoms)), tuple(sorted(shape(cp) for cp in p.compartments)))


def selections(pattern, content):
    """Every distinct reactant selection of ``pattern`` in ``content``."""
    atom_part = atom_selections(pattern.atoms, content.atoms)
    if not atom_part:
        return set()
    comps = pattern.compartments
    children = content.compartments
    comp_part = set()
    for assign in permutations(range(len(children)), len(comps)):
        options = []
        for cp, j in zip(comps, assign):
            child = children[j]
            if child.label != cp.label:
                options = None
                break
            wraps = atom_selections(cp.wrap_atoms, child.wrap)
            inner = selections(cp.content, child.content)
            choices = [(shape(cp), j, w, i) for w in wraps for i in inner]
            if not choices:
                options = None
                break
            options.append(choices)
        if options is None:
            continue
        for combo in product(*options):
            comp_part.add(frozenset(combo))
    return {(a, c) for a in atom_part for c in comp_part}


def _all(root):
    stack = [root]
    while stack:
        comp = stack.pop()
        yield comp
        stack.extend(comp.content.compartments)


def total_multiplicity(rule, system):
    return sum(len(selections(rule.lhs, comp.content))
               for comp in _all(as_root(system)) if comp.label == rule.context)


# -- random instances ----------------------------------------------------

def random_atoms(rng, max_count=4, k=3):
    names = rng.sample(SPECIES, rng.randint(0, k))
    return {a: rng.randint(1, max_count) for a in names}


def random_term(rng, depth=3, budget=None):
    """Term with at most four compartments in total and the given depth."""
    budget = [4] if budget is None else budget
    atoms = random_atoms(rng)
    comps = []
    if depth > 0:
        for _ in range(rng.randint(0, 3)):
            if budget[0] == 0:
                break
            budget[0] -= 1
            if comps and rng.random() < 0.4:
                prev = comps[-1]
                inner = Term(prev.content.atoms) if rng.random() < 0.5 else random_term(rng, depth - 1, [0])
                comps.append(Compartment(prev.label, prev.wrap, inner))
                continue
            wrap = random_atoms(rng, 2, 2)
            comps.append(Compartment(rng.choice(LABELS), wrap, random_term(rng, depth - 1, budget)))
    return Term(atoms, comps)


def _sub_atoms(rng, available, max_extra=1):
    out = {}
    for name in SPECIES:
        have = available.get(name, 0)
        if rng.random() < (0.4 if have else 0.05):
            top = have + (max_extra if rng.random() < 0.2 else 0)
            out[name] = rng.randint(1, max(1, min(4, top)))
    return out


def random_pattern(rng, content=None, depth=3, budget=None):
    """Pattern loosely shaped after ``content`` so matches are common."""
    budget = [2] if budget is None else budget
    content = content if content is not None else Term()
    atoms = _sub_atoms(rng, content.atoms)
    comps = []
    if depth > 0:
        for _ in range(rng.randint(0, 2)):
            if budget[0] == 0:
                break
            budget[0] -= 1
            model = rng.choice(content.compartments) if content.compartments else None
            label = model.label if model is not None and rng.random() < 0.8 else rng.choice(LABELS)
            wrap = _sub_atoms(rng, model.wrap if model is not None else {}, 0)
            inner = random_pattern(rng, model.content if model is not None else None, depth - 1, budget)
            n = len(comps)
            if comps and rng.random() < 0.5:
                # identical twin of the previous pattern, fresh variables
                twin = comps[-1]
                comps.append(CompartmentPattern(twin.label, twin.wrap_atoms, (f"x{depth}{n}",),
                                                twin.content, (f"X{depth}{n}",)))
                continue
            comps.append(CompartmentPattern(label, wrap, (f"x{depth}{n}",), inner, (f"X{depth}{n}",)))
    return Pattern(atoms, comps)


def random_instance(rng):
    """``(rule, system)`` within the documented size limits."""
    system = random_term(rng)
    labels = ["top"] + sorted({c.label for c in _all(as_root(system))} - {"top"})
    context = rng.choice(labels)
    sites = [c for c in _all(as_root(system)) if c.label == context]
    site = rng.choice(sites)
    if rng.random() < 0.5:
        site = max(sites, key=lambda c: len(c.content.compartments))
    lhs = random_pattern(rng, site.content)
    return Rule("r", context, lhs, OpenTerm(), 1.0), system


def random_twin_instance(rng, third=False):
    """Two identical compartment patterns over look-alike children.

    ``third`` may add a plain pattern of the same label, which goes past
    the two-pattern limit of :func:`random_instance`.
    """
    label = rng.choice(LABELS)
    children = []
    for _ in range(rng.randint(2, 4)):
        wrap = {"a": rng.randint(1, 2)} if rng.random() < 0.7 else {}
        children.append(Compartment(label, wrap, Term(random_atoms(rng, 3, 2))))
    system = Term(random_atoms(rng), children)
    wrap = {"a": 1} if rng.random() < 0.5 else {}
    inner = Pattern(_sub_atoms(rng, children[0].content.atoms, 0))
    twins = [CompartmentPattern(label, wrap, (f"x{i}",), inner, (f"X{i}",)) for i in range(2)]
    extra = []
    if third and rng.random() < 0.5:
        extra.append(CompartmentPattern(label, (), ("y",), Pattern(), ("Y",)))
    lhs = Pattern(_sub_atoms(rng, system.atoms, 0), twins + extra)
    return Rule("r", "top", lhs, OpenTerm(), 1.0), system
