"""Bundled models shipped with the package."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .dsl import ModelSource, expand, parse
from .model import Model, Observable

BUILTINS = ("quorum", "am_symbiosis", "grid")


class UnknownBuiltin(KeyError):
    def __str__(self):
        return f"unknown builtin model {self.args[0]!r}; available: {', '.join(BUILTINS)}"


@dataclass(frozen=True)
class BuiltinDescriptor:
    name: str
    source: str
    summary: str
    parameters: dict  # documented parameter -> description
    presets: dict  # preset name -> parameter overrides
    time_unit: str


_DESCRIPTIONS = {
    "quorum": BuiltinDescriptor(
        "quorum", "", "quorum sensing in four sectors linked by oxo3 diffusion",
        {"n1..n4": "bacteria per sector", "k12..k34": "diffusion rate between sectors"},
        {}, "s"),
    "am_symbiosis": BuiltinDescriptor(
        "am_symbiosis", "", "arbuscular mycorrhizal root colonisation",
        {"P": "phosphate atoms per soil layer", "K_*": "rate constants"},
        {"low": {"P": 10}, "medium": {"P": 50}, "high": {"P": 100}}, "day"),
    "grid": BuiltinDescriptor(
        "grid", "", "cell-cycle proliferation on a K x N grid",
        {"K": "grid rows", "N": "grid columns", "seeded": "1 puts a mitotic cell at g_1_1"},
        {"seeded": {"seeded": 1}}, "arbitrary"),
}


def _check(name: str) -> None:
    if name not in BUILTINS:
        raise UnknownBuiltin(name)


def builtin_source(name: str) -> str:
    _check(name)
    return resources.files("cwcsim").joinpath("models", f"{name}.cwc").read_text(encoding="utf-8")


def describe_builtin(name: str) -> BuiltinDescriptor:
    _check(name)
    d = _DESCRIPTIONS[name]
    return BuiltinDescriptor(d.name, builtin_source(name), d.summary, d.parameters, d.presets, d.time_unit)


@lru_cache(maxsize=None)
def _ast(name: str):
    return parse(ModelSource(builtin_source(name), f"{name}.cwc"))


def load_builtin(name: str, params: dict | None = None) -> Model:
    """Parse and expand a bundled model, optionally overriding parameters."""
    _check(name)
    return expand(_ast(name), params)


_THRESHOLDS = {
    "quorum": {f"active_S{i}": 50.0 for i in range(1, 5)},
    "am_symbiosis": {"arbuscules": 1.0},
    "grid": {"G1": 1.0},
}


def default_thresholds(name: str) -> dict[str, float]:
    """First-crossing thresholds reported by default for a bundled model."""
    _check(name)
    return dict(_THRESHOLDS[name])


def builtin_observables(name: str) -> list[Observable]:
    return list(load_builtin(name).observables)
