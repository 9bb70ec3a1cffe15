"""Registry of prebuilt, parameterized closed-loop systems.

Every default carries an origin tag: "published" values are taken from the
worked examples this library reproduces, "chosen" values fill gaps the
examples leave open, and "structural" values are fixed by the model itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, NamedTuple, Optional

import numpy as np

from ..hybrid_core import HybridArc, HybridError, HybridSystem, SolverConfig

PUBLISHED = "published"
CHOSEN = "chosen"
STRUCTURAL = "structural"
ORIGINS = (PUBLISHED, CHOSEN, STRUCTURAL)


class UnknownScenario(HybridError):
    pass


class InvalidOverride(HybridError):
    pass


class NoCounterpart(HybridError):
    pass


@dataclass(frozen=True)
class Param:
    default: Any
    origin: str
    note: str = ""
    choices: tuple = ()

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    def coerce(self, name: str, value):
        d = self.default
        if isinstance(d, bool):
            if isinstance(value, (bool, np.bool_)):
                return bool(value)
            raise InvalidOverride(f"{name} expects a boolean, got {value!r}")
        if isinstance(d, str):
            if not isinstance(value, str):
                raise InvalidOverride(f"{name} expects a string, got {value!r}")
            if self.choices and value not in self.choices:
                raise InvalidOverride(f"{name} must be one of {list(self.choices)}, got {value!r}")
            return value
        if isinstance(d, int):
            if isinstance(value, (bool, np.bool_)) or not float(_number(name, value)).is_integer():
                raise InvalidOverride(f"{name} expects an integer, got {value!r}")
            return int(value)
        if isinstance(d, float):
            return _finite(name, float(_number(name, value)))
        if isinstance(d, tuple):
            if isinstance(value, (str, bytes)) or not hasattr(value, "__len__"):
                raise InvalidOverride(f"{name} expects a vector of length {len(d)}, got {value!r}")
            if len(value) != len(d):
                raise InvalidOverride(f"{name} expects {len(d)} entries, got {len(value)}")
            return tuple(_finite(name, float(_number(name, v))) for v in value)
        raise InvalidOverride(f"{name} cannot be overridden")


def _number(name, value):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise InvalidOverride(f"{name} expects a number, got {value!r}")
    return value


def _finite(name, v: float) -> float:
    if not math.isfinite(v):
        raise InvalidOverride(f"{name} must be finite")
    return v


class Built(NamedTuple):
    system: HybridSystem
    x0: np.ndarray
    config: SolverConfig
    metadata: dict


@dataclass(frozen=True)
class Counterpart:
    """Averaged or target arc, and which of its coordinates match which scenario coordinates."""

    arc: HybridArc
    coords: tuple[int, ...]
    reference_coords: tuple[int, ...]


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    description: str
    topic: str
    params: Mapping[str, Param]
    builder: Callable
    counterpart: Optional[Callable] = None
    metrics: Optional[Callable] = None
    tags: tuple[str, ...] = field(default=())

    def defaults(self) -> dict:
        return {k: p.default for k, p in self.params.items()}

    def resolve(self, overrides: Optional[Mapping] = None) -> dict:
        values = self.defaults()
        for key, value in (overrides or {}).items():
            if key not in self.params:
                raise InvalidOverride(f"{self.name} has no parameter {key!r}")
            values[key] = self.params[key].coerce(key, value)
        return values

    def describe(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "topic": self.topic,
            "has_counterpart": self.counterpart is not None,
            "params": {
                k: {"default": _jsonable(p.default), "origin": p.origin, "note": p.note,
                    **({"choices": list(p.choices)} if p.choices else {})}
                for k, p in self.params.items()
            },
        }


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(e) for e in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


_REGISTRY: dict[str, ScenarioSpec] = {}


def register(spec: ScenarioSpec) -> ScenarioSpec:
    if spec.name in _REGISTRY:
        raise ValueError(f"duplicate scenario {spec.name}")
    _REGISTRY[spec.name] = spec
    return spec


def get_spec(name: str) -> ScenarioSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownScenario(f"no scenario named {name!r}") from None


def list_scenarios() -> list[dict]:
    return [spec.describe() for spec in _REGISTRY.values()]


def scenario_names() -> list[str]:
    return list(_REGISTRY)


def build_scenario(name: str, overrides: Optional[Mapping] = None) -> Built:
    """Assemble a registered scenario; returns (system, x0, config, metadata)."""
    spec = get_spec(name)
    params = spec.resolve(overrides)
    system, x0, config, extra = spec.builder(params)
    meta = {
        "scenario": name,
        "description": spec.description,
        "params": {k: _jsonable(v) for k, v in params.items()},
        "origins": {k: p.origin for k, p in spec.params.items()},
        "dim": system.dim,
        "state_names": list(system.state_names()),
    }
    meta.update({k: _jsonable(v) for k, v in extra.items()})
    return Built(system, np.asarray(x0, dtype=float), config, meta)


def counterpart(name: str, overrides: Optional[Mapping] = None) -> Counterpart:
    spec = get_spec(name)
    if spec.counterpart is None:
        raise NoCounterpart(f"{name} has no averaged or target counterpart")
    return spec.counterpart(spec.resolve(overrides))


def reference_arc(name: str, overrides: Optional[Mapping] = None) -> HybridArc:
    """Arc of the averaged or target system that a scenario approximates."""
    return counterpart(name, overrides).arc


def scenario_metrics(name: str, arc: HybridArc, metadata: Mapping) -> dict:
    """Scalar summaries of a run: terminal error to the known optimum, divergence, and extras.

    A run counts as diverged when the decision coordinates become non-finite or
    their peak norm exceeds ten times max(|start|, |optimum|).
    """
    spec = get_spec(name)
    out: dict = {"n_jumps": arc.n_jumps, "t_final": float(arc.times[-1][-1])}
    xf = arc.final_state()
    out["final_norm"] = float(np.linalg.norm(xf))
    opt = metadata.get("optimum")
    coords = metadata.get("decision_coords")
    if opt is not None and coords is not None:
        u = xf[list(coords)]
        out["terminal_error"] = float(np.linalg.norm(u - np.asarray(opt, dtype=float)))
        start = arc.states[0][0][list(coords)]
        peak = max(float(np.max(np.linalg.norm(x[:, list(coords)], axis=1))) for x in arc.states)
        out["peak_norm"] = peak
        # growth is measured against the larger of the start and the target
        base = max(float(np.linalg.norm(start)), float(np.linalg.norm(opt)))
        out["diverged"] = bool(not np.all(np.isfinite(u)) or (base > 0 and peak > 10.0 * base))
    if spec.metrics is not None:
        out.update(spec.metrics(arc, metadata))
    return out


# populate the registry
from . import basic, constrained, games, plants, switching  # noqa: E402,F401

__all__ = [
    "Built", "Counterpart", "InvalidOverride", "NoCounterpart", "Param", "ScenarioSpec",
    "UnknownScenario", "build_scenario", "counterpart", "get_spec", "list_scenarios",
    "reference_arc", "scenario_metrics", "scenario_names", "PUBLISHED", "CHOSEN", "STRUCTURAL",
]
