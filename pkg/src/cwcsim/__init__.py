"""Stochastic simulation of the Calculus of Wrapped Compartments."""

__version__ = "0.1.0"

from .dsl import Diagnostic, ModelError, ModelSource, expand, format_model, parse
from .engine import SimConfig, SimState, Trajectory, propensity, simulate, step
from .library import BUILTINS, UnknownBuiltin, builtin_observables, load_builtin
from .model import Model, Observable
from .patterns import (
    apply_rule,
    enumerate_sites,
    multiplicity,
    select_reactants,
    validate_rule,
)
from .terms import (
    Compartment,
    Term,
    collect_compartments,
    count_atom,
    normalize,
    term_eq,
)
