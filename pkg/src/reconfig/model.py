"""Shared domain types, scenario schema and validation.

Every other module works on the frozen dataclasses defined here. A scenario
document (JSON) is turned into a :class:`Scenario` by :func:`validate_scenario`,
which collects *all* violations with a path to the offending element before
raising :class:`ScenarioError`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .plant import PlantSpec, parse_plant_spec

log = logging.getLogger(__name__)

WEIGHT_TOL = 1e-9


class Criterion(str, Enum):
    TIME = "time"  # seconds
    ENERGY = "energy"  # joules
    COST = "cost"  # currency units


CRITERIA: tuple[Criterion, ...] = (Criterion.TIME, Criterion.ENERGY, Criterion.COST)
UNITS = {Criterion.TIME: "s", Criterion.ENERGY: "J", Criterion.COST: "cu"}


@dataclass(frozen=True)
class EffortVector:
    """Non-negative effort per criterion (s, J, currency units)."""

    time: float = 0.0
    energy: float = 0.0
    cost: float = 0.0

    def __post_init__(self):
        for z in CRITERIA:
            v = getattr(self, z.value)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"effort component {z.value}={v!r} must be finite and >= 0")

    def __getitem__(self, z: Criterion | str) -> float:
        return getattr(self, Criterion(z).value)

    def __iter__(self) -> Iterator[float]:
        return iter((self.time, self.energy, self.cost))

    def __add__(self, other: EffortVector) -> EffortVector:
        return EffortVector(self.time + other.time, self.energy + other.energy, self.cost + other.cost)

    @classmethod
    def zero(cls) -> EffortVector:
        return cls()

    @classmethod
    def from_mapping(cls, values: Mapping[Criterion | str, float]) -> EffortVector:
        return cls(**{Criterion(k).value: float(v) for k, v in values.items()})

    def to_json(self) -> dict[str, float]:
        return {z.value: self[z] for z in CRITERIA}


@dataclass(frozen=True)
class CriteriaWeights:
    time: float
    energy: float
    cost: float

    def __post_init__(self):
        ws = tuple(self)
        if any(not math.isfinite(w) or w < 0 or w > 1 for w in ws):
            raise ValueError(f"weights must lie in [0, 1], got {ws}")
        if abs(sum(ws) - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum != 1 (sum={sum(ws)!r})")

    def __getitem__(self, z: Criterion | str) -> float:
        return getattr(self, Criterion(z).value)

    def __iter__(self) -> Iterator[float]:
        return iter((self.time, self.energy, self.cost))

    def to_json(self) -> dict[str, float]:
        return {z.value: self[z] for z in CRITERIA}


# --- product states -------------------------------------------------------


@dataclass(frozen=True, order=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError(f"malformed interval [{self.lo}, {self.hi}]")

    def contains(self, other: Interval) -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def to_json(self) -> float | list[float]:
        return self.lo if self.lo == self.hi else [self.lo, self.hi]


class StateDescription(Mapping[str, Interval]):
    """Immutable mapping of property name to an exact value or closed interval.

    Exact values are stored as degenerate intervals; booleans are 0/1.
    """

    __slots__ = ("_props", "_key")

    def __init__(self, props: Mapping[str, float | Interval | Iterable[float]] | None = None):
        parsed: dict[str, Interval] = {}
        for name, value in (props or {}).items():
            if isinstance(value, Interval):
                parsed[name] = value
            elif isinstance(value, (int, float)):
                parsed[name] = Interval(float(value), float(value))
            else:
                lo, hi = value
                parsed[name] = Interval(float(lo), float(hi))
        self._props = dict(sorted(parsed.items()))
        self._key = tuple((k, v.lo, v.hi) for k, v in self._props.items())

    def __getitem__(self, name: str) -> Interval:
        return self._props[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._props)

    def __len__(self) -> int:
        return len(self._props)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StateDescription):
            return NotImplemented
        return self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __lt__(self, other: StateDescription) -> bool:
        return self._key < other._key

    def __repr__(self) -> str:
        return f"StateDescription({self.to_json()!r})"

    def to_json(self) -> dict[str, Any]:
        return {k: v.to_json() for k, v in self._props.items()}


def state_satisfies(actual: StateDescription, required: StateDescription) -> bool:
    """True iff every required property is defined in ``actual`` and contained in the requirement."""
    for name, need in required.items():
        have = actual.get(name)
        if have is None or not need.contains(have):
            return False
    return True


# --- modules and operators ------------------------------------------------


@dataclass(frozen=True)
class AffineMap:
    """``x -> coefficients . x + offset``; used for the criterion mappings."""

    coefficients: tuple[float, ...]
    offset: float = 0.0

    def __call__(self, x) -> float:
        total = self.offset
        for c, v in zip(self.coefficients, x, strict=True):
            total += c * float(v)
        return total

    def to_json(self) -> dict[str, Any]:
        return {"coefficients": list(self.coefficients), "offset": self.offset}


IDENTITY_MAP = AffineMap((1.0,), 0.0)


@dataclass(frozen=True)
class Parameter:
    name: str
    lo: float
    hi: float


@dataclass(frozen=True)
class DurationModel:
    """Service-cycle duration in seconds, affine in the operator parameters."""

    base: float
    coefficients: tuple[float, ...]

    def __call__(self, u) -> float:
        return self.base + sum(c * float(x) for c, x in zip(self.coefficients, u, strict=True))


@dataclass(frozen=True)
class ProcessOperator:
    id: str
    input: StateDescription
    output: StateDescription
    parameters: tuple[Parameter, ...]
    duration: DurationModel
    model: str

    @property
    def lower(self) -> tuple[float, ...]:
        return tuple(p.lo for p in self.parameters)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(p.hi for p in self.parameters)


@dataclass(frozen=True)
class ModuleConfiguration:
    """One configuration of a module.

    ``standby`` holds the standby effort rates per second of standby for energy
    and cost; the time rate is implicitly 1 s/s. ``standby_mapping`` is the
    scalar affine mapping applied to the per-cycle constant.
    """

    id: str
    operators: tuple[ProcessOperator, ...]
    standby: Mapping[Criterion, float]
    standby_mapping: Mapping[Criterion, AffineMap]
    switch_from: Mapping[str, EffortVector]

    def operator(self, operator_id: str) -> ProcessOperator:
        for op in self.operators:
            if op.id == operator_id:
                return op
        raise KeyError(f"configuration {self.id!r} has no operator {operator_id!r}")

    def switch_effort(self, from_id: str) -> EffortVector:
        if from_id == self.id:
            return EffortVector.zero()
        return self.switch_from[from_id]


@dataclass(frozen=True)
class Cppm:
    id: str
    configurations: tuple[ModuleConfiguration, ...]
    current_configuration: str
    location: str | None = None

    def configuration(self, configuration_id: str) -> ModuleConfiguration:
        for cfg in self.configurations:
            if cfg.id == configuration_id:
                return cfg
        raise KeyError(f"module {self.id!r} has no configuration {configuration_id!r}")

    @property
    def current(self) -> ModuleConfiguration:
        return self.configuration(self.current_configuration)


@dataclass(frozen=True)
class Edge:
    a: str
    b: str
    effort: EffortVector


@dataclass(frozen=True)
class LayoutGraph:
    locations: tuple[str, ...]
    edges: tuple[Edge, ...] = ()

    def adjacent(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self._edge_set

    @property
    def _edge_set(self) -> frozenset[frozenset[str]]:
        cached = self.__dict__.get("_edges_cache")
        if cached is None:
            cached = frozenset(frozenset((e.a, e.b)) for e in self.edges)
            object.__setattr__(self, "_edges_cache", cached)
        return cached

    def neighbours(self, node: str) -> list[tuple[str, EffortVector]]:
        out = []
        for e in self.edges:
            if e.a == node:
                out.append((e.b, e.effort))
            elif e.b == node:
                out.append((e.a, e.effort))
        return out


@dataclass(frozen=True)
class ProductionOrder:
    input: StateDescription
    output: StateDescription
    lot_size: int
    weights: CriteriaWeights


@dataclass(frozen=True)
class Step:
    """One production step: which module, in which configuration, runs which operator."""

    module: str
    configuration: str
    operator: str

    def to_json(self) -> dict[str, str]:
        return {"module": self.module, "configuration": self.configuration, "operator": self.operator}


@dataclass(frozen=True)
class SystemConfiguration:
    steps: tuple[Step, ...]
    layout: Mapping[str, str] = field(default_factory=dict)
    reconfiguration: EffortVector = EffortVector()
    parameters: tuple[tuple[float, ...], ...] | None = None
    production: EffortVector | None = None
    total: EffortVector | None = None
    evaluation: Mapping[Criterion, float] | None = None
    utility: float | None = None

    def __post_init__(self):
        if not self.steps:
            raise ValueError("a system configuration needs at least one step")
        locs = list(self.layout.values())
        if len(set(locs)) != len(locs):
            raise ValueError("a location is assigned twice")
        for r in (self.evaluation or {}).values():
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"evaluation value {r} outside [0, 1]")
        if self.utility is not None and not 0.0 <= self.utility <= 1.0 + 1e-12:
            raise ValueError(f"utility {self.utility} outside [0, 1]")

    @property
    def sequence_key(self) -> tuple[tuple[str, str, str], ...]:
        return tuple((s.module, s.configuration, s.operator) for s in self.steps)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "sequence": [s.to_json() for s in self.steps],
            "layout": dict(sorted(self.layout.items())),
            "reconfiguration": self.reconfiguration.to_json(),
        }
        if self.parameters is not None:
            out["parameters"] = [list(p) for p in self.parameters]
        if self.production is not None:
            out["production"] = self.production.to_json()
        if self.total is not None:
            out["total"] = self.total.to_json()
        if self.evaluation is not None:
            out["evaluation"] = {z.value: self.evaluation[z] for z in CRITERIA}
        if self.utility is not None:
            out["utility"] = self.utility
        return out


# --- process model declarations --------------------------------------------


@dataclass(frozen=True)
class CriterionProjection:
    """Which parts of the process model are dropped for one criterion.

    Output components are named; output lags run 1..n_y, actuation channels
    0..m_u-1, actuation lags 0..n_u (0 is the current actuation).
    """

    exclude_outputs: tuple[str, ...] = ()
    exclude_output_lags: tuple[int, ...] = ()
    exclude_actuations: tuple[int, ...] = ()
    exclude_actuation_lags: tuple[int, ...] = ()
    exclude_coupling: tuple[int, ...] = ()
    mapping: AffineMap | None = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "exclude_outputs": list(self.exclude_outputs),
            "exclude_output_lags": list(self.exclude_output_lags),
            "exclude_actuations": list(self.exclude_actuations),
            "exclude_actuation_lags": list(self.exclude_actuation_lags),
            "exclude_coupling": list(self.exclude_coupling),
        }
        if self.mapping is not None:
            out["mapping"] = self.mapping.to_json()
        return out


@dataclass(frozen=True)
class TrainingSettings:
    learning_rate: float = 0.01
    epochs: int = 300
    batch_size: int = 32

    def to_json(self) -> dict[str, Any]:
        return {"learning_rate": self.learning_rate, "epochs": self.epochs, "batch_size": self.batch_size}


@dataclass(frozen=True)
class ProcessModelSpec:
    id: str
    outputs: tuple[str, ...]
    output_range: tuple[tuple[float, float], ...]
    actuations: int
    n_y: int = 1
    n_u: int = 1
    coupling_dim: int = 0
    hidden: tuple[int, ...] = (16,)
    horizon: int = 200
    seed: int = 0
    criteria: Mapping[Criterion, CriterionProjection] = field(default_factory=dict)
    plant: PlantSpec | None = None
    training: TrainingSettings = TrainingSettings()

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "outputs": list(self.outputs),
            "output_range": [list(r) for r in self.output_range],
            "actuations": self.actuations,
            "n_y": self.n_y,
            "n_u": self.n_u,
            "coupling_dim": self.coupling_dim,
            "hidden": list(self.hidden),
            "horizon": self.horizon,
            "seed": self.seed,
            "criteria": {z.value: p.to_json() for z, p in sorted(self.criteria.items(), key=lambda i: CRITERIA.index(i[0]))},
            "training": self.training.to_json(),
        }
        if self.plant is not None:
            out["plant"] = self.plant.to_json()
        return out


@dataclass(frozen=True)
class OptimizerSettings:
    strategy: str = "random_pattern"
    budget_single: int = 300
    budget_weighted: int = 600
    pattern_fraction: float = 0.3
    grid_points: int = 5
    seed: int | None = None
    max_depth: int = 8
    max_branches: int = 10_000

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "strategy": self.strategy,
            "budget_single": self.budget_single,
            "budget_weighted": self.budget_weighted,
            "pattern_fraction": self.pattern_fraction,
            "grid_points": self.grid_points,
            "search": {"max_depth": self.max_depth, "max_branches": self.max_branches},
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out


STRATEGIES = ("random_pattern", "grid")


@dataclass(frozen=True)
class Scenario:
    modules: tuple[Cppm, ...]
    layout: LayoutGraph
    order: ProductionOrder
    process_models: Mapping[str, ProcessModelSpec]
    optimizer: OptimizerSettings
    seed: int

    def module(self, module_id: str) -> Cppm:
        for m in self.modules:
            if m.id == module_id:
                return m
        raise KeyError(f"no module {module_id!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "order": {
                "input": self.order.input.to_json(),
                "output": self.order.output.to_json(),
                "lot_size": self.order.lot_size,
                "weights": self.order.weights.to_json(),
            },
            "layout": {
                "locations": list(self.layout.locations),
                "edges": [{"a": e.a, "b": e.b, "effort": e.effort.to_json()} for e in self.layout.edges],
            },
            "modules": [_module_json(m) for m in self.modules],
            "process_models": [pm.to_json() for pm in self.process_models.values()],
            "optimizer": self.optimizer.to_json(),
        }


def _module_json(m: Cppm) -> dict[str, Any]:
    configs = []
    for cfg in m.configurations:
        configs.append(
            {
                "id": cfg.id,
                "standby": {z.value: v for z, v in cfg.standby.items()},
                "standby_mapping": {
                    z.value: {"coefficient": a.coefficients[0], "offset": a.offset}
                    for z, a in cfg.standby_mapping.items()
                },
                "switch_from": {k: v.to_json() for k, v in cfg.switch_from.items()},
                "operators": [
                    {
                        "id": op.id,
                        "input": op.input.to_json(),
                        "output": op.output.to_json(),
                        "parameters": [{"name": p.name, "bounds": [p.lo, p.hi]} for p in op.parameters],
                        "duration": {"base": op.duration.base, "coefficients": list(op.duration.coefficients)},
                        "model": op.model,
                    }
                    for op in cfg.operators
                ],
            }
        )
    return {
        "id": m.id,
        "current_configuration": m.current_configuration,
        "location": m.location,
        "configurations": configs,
    }


# --- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class ScenarioError(ValueError):
    """Raised with the full list of violations found in a scenario document."""

    def __init__(self, issues: Iterable[Issue]):
        self.issues = list(issues)
        super().__init__("\n".join(str(i) for i in self.issues))


_MISSING = object()


class _Checker:
    def __init__(self, strict: bool):
        self.strict = strict
        self.issues: list[Issue] = []

    def error(self, path: str, message: str) -> None:
        self.issues.append(Issue(path, message))

    def obj(self, value: Any, path: str, required: Iterable[str], optional: Iterable[str] = ()) -> bool:
        if not isinstance(value, dict):
            self.error(path, "expected an object")
            return False
        required = tuple(required)
        ok = True
        for key in required:
            if key not in value:
                self.error(path, f"missing key {key!r}")
                ok = False
        known = set(required) | set(optional)
        for key in value:
            if key not in known:
                if self.strict:
                    self.error(f"{path}.{key}", "unknown key")
                else:
                    log.warning("%s.%s: unknown key ignored", path, key)
        return ok

    def number(self, value: Any, path: str, *, minimum: float | None = None, integer: bool = False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(path, "expected a number")
            return None
        if integer and not (isinstance(value, int) or float(value).is_integer()):
            self.error(path, "expected an integer")
            return None
        if not math.isfinite(value):
            self.error(path, "must be finite")
            return None
        if minimum is not None and value < minimum:
            self.error(path, f"must be >= {minimum}")
            return None
        return int(value) if integer else float(value)

    def string(self, value: Any, path: str) -> str | None:
        if not isinstance(value, str) or not value:
            self.error(path, "expected a non-empty string")
            return None
        return value

    def ints(self, value: Any, path: str, lo: int, hi: int) -> tuple[int, ...]:
        if not isinstance(value, list):
            self.error(path, "expected a list")
            return ()
        out = []
        for i, v in enumerate(value):
            n = self.number(v, f"{path}[{i}]", integer=True)
            if n is None:
                continue
            if not lo <= n <= hi:
                self.error(f"{path}[{i}]", f"index {n} outside {lo}..{hi}")
                continue
            out.append(n)
        return tuple(sorted(set(out)))

    def effort(self, value: Any, path: str) -> EffortVector | None:
        if not self.obj(value, path, (), [z.value for z in CRITERIA]):
            return None
        vals = {}
        for z in CRITERIA:
            v = self.number(value.get(z.value, 0.0), f"{path}.{z.value}", minimum=0.0)
            if v is None:
                return None
            vals[z.value] = v
        return EffortVector(**vals)

    def state(self, value: Any, path: str) -> StateDescription | None:
        if not isinstance(value, dict):
            self.error(path, "expected an object of properties")
            return None
        props: dict[str, Interval] = {}
        for name, v in value.items():
            p = f"{path}.{name}"
            if isinstance(v, list):
                if len(v) != 2:
                    self.error(p, "interval must be [lo, hi]")
                    continue
                lo, hi = self.number(v[0], f"{p}[0]"), self.number(v[1], f"{p}[1]")
                if lo is None or hi is None:
                    continue
                if lo > hi:
                    self.error(p, f"malformed interval: lo {lo} > hi {hi}")
                    continue
                props[name] = Interval(lo, hi)
            else:
                x = self.number(v, p)
                if x is not None:
                    props[name] = Interval(x, x)
        return StateDescription(props)

    def unique(self, ids: list[tuple[str, str]], what: str) -> None:
        seen: set[str] = set()
        for path, ident in ids:
            if ident in seen:
                self.error(path, f"duplicate {what} id {ident!r}")
            seen.add(ident)


def validate_scenario(doc: Mapping[str, Any], *, strict: bool = True) -> Scenario:
    """Check a parsed scenario document and build the typed :class:`Scenario`.

    Raises :class:`ScenarioError` listing every violation. With
    ``strict=False`` unknown keys are logged as warnings instead of errors.
    """
    ck = _Checker(strict)
    top = ("modules", "layout", "order", "process_models", "optimizer", "seed")
    if not ck.obj(doc, "$", top):
        raise ScenarioError(ck.issues)

    seed = ck.number(doc["seed"], "$.seed", minimum=0, integer=True)
    optimizer = _parse_optimizer(ck, doc["optimizer"], "$.optimizer")
    layout = _parse_layout(ck, doc["layout"], "$.layout")
    order = _parse_order(ck, doc["order"], "$.order")
    models = _parse_process_models(ck, doc["process_models"], "$.process_models", order)
    modules = _parse_modules(ck, doc["modules"], "$.modules", layout, models)

    if ck.issues:
        raise ScenarioError(ck.issues)
    return Scenario(modules, layout, order, models, optimizer, seed)


def _parse_optimizer(ck: _Checker, raw: Any, path: str) -> OptimizerSettings:
    keys = ("strategy", "budget_single", "budget_weighted", "pattern_fraction", "grid_points", "seed", "search")
    if not ck.obj(raw, path, (), keys):
        return OptimizerSettings()
    kw: dict[str, Any] = {}
    if "strategy" in raw:
        if raw["strategy"] not in STRATEGIES:
            ck.error(f"{path}.strategy", f"unknown strategy {raw['strategy']!r}; expected one of {STRATEGIES}")
        else:
            kw["strategy"] = raw["strategy"]
    for key in ("budget_single", "budget_weighted", "grid_points"):
        if key in raw:
            v = ck.number(raw[key], f"{path}.{key}", minimum=1, integer=True)
            if v is not None:
                kw[key] = v
    if "pattern_fraction" in raw:
        v = ck.number(raw["pattern_fraction"], f"{path}.pattern_fraction", minimum=0.0)
        if v is not None and v > 1:
            ck.error(f"{path}.pattern_fraction", "must be <= 1")
        elif v is not None:
            kw["pattern_fraction"] = v
    if "seed" in raw:
        kw["seed"] = ck.number(raw["seed"], f"{path}.seed", minimum=0, integer=True)
    if "search" in raw:
        sp = f"{path}.search"
        if ck.obj(raw["search"], sp, (), ("max_depth", "max_branches")):
            for key in ("max_depth", "max_branches"):
                if key in raw["search"]:
                    v = ck.number(raw["search"][key], f"{sp}.{key}", minimum=1, integer=True)
                    if v is not None:
                        kw[key] = v
    return OptimizerSettings(**kw)


def _parse_layout(ck: _Checker, raw: Any, path: str) -> LayoutGraph:
    if not ck.obj(raw, path, ("locations",), ("edges",)):
        return LayoutGraph(())
    locs = []
    if not isinstance(raw["locations"], list):
        ck.error(f"{path}.locations", "expected a list")
    else:
        for i, loc in enumerate(raw["locations"]):
            s = ck.string(loc, f"{path}.locations[{i}]")
            if s is not None:
                locs.append((f"{path}.locations[{i}]", s))
    ck.unique(locs, "location")
    names = {s for _, s in locs}
    edges = []
    seen_pairs: set[frozenset[str]] = set()
    for i, e in enumerate(raw.get("edges", [])):
        ep = f"{path}.edges[{i}]"
        if not ck.obj(e, ep, ("a", "b"), ("effort",)):
            continue
        a, b = ck.string(e["a"], f"{ep}.a"), ck.string(e["b"], f"{ep}.b")
        effort = ck.effort(e.get("effort", {}), f"{ep}.effort")
        if a is None or b is None or effort is None:
            continue
        bad = False
        for end, key in ((a, "a"), (b, "b")):
            if end not in names:
                ck.error(f"{ep}.{key}", f"unknown location {end!r}")
                bad = True
        if a == b:
            ck.error(ep, "self-loop")
            bad = True
        pair = frozenset((a, b))
        if pair in seen_pairs:
            ck.error(ep, f"duplicate edge {a}-{b}")
            bad = True
        seen_pairs.add(pair)
        if not bad:
            edges.append(Edge(a, b, effort))
    return LayoutGraph(tuple(s for _, s in locs), tuple(edges))


def _parse_order(ck: _Checker, raw: Any, path: str) -> ProductionOrder | None:
    if not ck.obj(raw, path, ("input", "output", "lot_size", "weights")):
        return None
    inp = ck.state(raw["input"], f"{path}.input")
    out = ck.state(raw["output"], f"{path}.output")
    lot = ck.number(raw["lot_size"], f"{path}.lot_size", minimum=1, integer=True)
    weights = None
    wp = f"{path}.weights"
    if ck.obj(raw["weights"], wp, [z.value for z in CRITERIA]):
        ws = [ck.number(raw["weights"][z.value], f"{wp}.{z.value}", minimum=0.0) for z in CRITERIA]
        if all(w is not None for w in ws):
            if any(w > 1 for w in ws):
                ck.error(wp, "each weight must be <= 1")
            elif abs(sum(ws) - 1.0) > WEIGHT_TOL:
                ck.error(wp, f"weights sum != 1 (sum={sum(ws):g})")
            else:
                weights = CriteriaWeights(*ws)
    if None in (inp, out, lot, weights):
        return None
    return ProductionOrder(inp, out, lot, weights)


def _affine(ck: _Checker, raw: Any, path: str, width: int) -> AffineMap | None:
    if not ck.obj(raw, path, ("coefficients",), ("offset",)):
        return None
    coeffs = raw["coefficients"]
    if not isinstance(coeffs, list) or len(coeffs) != width:
        ck.error(f"{path}.coefficients", f"expected {width} coefficients")
        return None
    cs = [ck.number(c, f"{path}.coefficients[{i}]") for i, c in enumerate(coeffs)]
    off = ck.number(raw.get("offset", 0.0), f"{path}.offset")
    if None in cs or off is None:
        return None
    return AffineMap(tuple(cs), off)


def _parse_process_models(ck: _Checker, raw: Any, path: str, order: ProductionOrder | None) -> dict[str, ProcessModelSpec]:
    if not isinstance(raw, list):
        ck.error(path, "expected a list")
        return {}
    ck.unique([(f"{path}[{i}].id", m.get("id")) for i, m in enumerate(raw) if isinstance(m, dict)], "process model")
    out: dict[str, ProcessModelSpec] = {}
    keys = ("n_y", "n_u", "coupling_dim", "hidden", "horizon", "seed", "criteria", "plant", "training")
    for i, m in enumerate(raw):
        mp = f"{path}[{i}]"
        if not ck.obj(m, mp, ("id", "outputs", "output_range", "actuations"), keys):
            continue
        spec = _parse_process_model(ck, m, mp, order)
        if spec is not None:
            out[spec.id] = spec
    return out


def _parse_process_model(ck: _Checker, m: dict, mp: str, order: ProductionOrder | None) -> ProcessModelSpec | None:
    n_issues = len(ck.issues)
    ident = ck.string(m["id"], f"{mp}.id")
    outputs = m["outputs"]
    if not isinstance(outputs, list) or not outputs or not all(isinstance(o, str) for o in outputs):
        ck.error(f"{mp}.outputs", "expected a non-empty list of output names")
        return None
    if len(set(outputs)) != len(outputs):
        ck.error(f"{mp}.outputs", "duplicate output names")
    m_y = len(outputs)
    ranges = []
    rr = m["output_range"]
    if not isinstance(rr, list) or len(rr) != m_y:
        ck.error(f"{mp}.output_range", f"expected {m_y} [lo, hi] pairs")
    else:
        for j, r in enumerate(rr):
            rp = f"{mp}.output_range[{j}]"
            if not isinstance(r, list) or len(r) != 2:
                ck.error(rp, "expected [lo, hi]")
                continue
            lo, hi = ck.number(r[0], f"{rp}[0]"), ck.number(r[1], f"{rp}[1]")
            if lo is not None and hi is not None:
                if lo > hi:
                    ck.error(rp, "malformed interval")
                ranges.append((lo, hi))
    m_u = ck.number(m["actuations"], f"{mp}.actuations", minimum=1, integer=True)
    n_y = ck.number(m.get("n_y", 1), f"{mp}.n_y", minimum=1, integer=True)
    n_u = ck.number(m.get("n_u", 1), f"{mp}.n_u", minimum=1, integer=True)
    cdim = ck.number(m.get("coupling_dim", 0), f"{mp}.coupling_dim", minimum=0, integer=True)
    horizon = ck.number(m.get("horizon", 200), f"{mp}.horizon", minimum=1, integer=True)
    seed = ck.number(m.get("seed", 0), f"{mp}.seed", minimum=0, integer=True)
    hidden_raw = m.get("hidden", [16])
    hidden = ()
    if not isinstance(hidden_raw, list):
        ck.error(f"{mp}.hidden", "expected a list of layer widths")
    else:
        hidden = tuple(
            h for h in (ck.number(v, f"{mp}.hidden[{i}]", minimum=1, integer=True) for i, v in enumerate(hidden_raw)) if h
        )
    training = TrainingSettings()
    if "training" in m:
        tp = f"{mp}.training"
        t = m["training"]
        if ck.obj(t, tp, (), ("learning_rate", "epochs", "batch_size")):
            lr = ck.number(t.get("learning_rate", 0.01), f"{tp}.learning_rate", minimum=0.0)
            ep = ck.number(t.get("epochs", 300), f"{tp}.epochs", minimum=0, integer=True)
            bs = ck.number(t.get("batch_size", 32), f"{tp}.batch_size", minimum=1, integer=True)
            if None not in (lr, ep, bs):
                training = TrainingSettings(lr, ep, bs)
    if None in (ident, m_u, n_y, n_u, cdim, horizon, seed):
        return None

    criteria: dict[Criterion, CriterionProjection] = {}
    crit_raw = m.get("criteria", {})
    if ck.obj(crit_raw, f"{mp}.criteria", (), [z.value for z in CRITERIA]):
        for z in CRITERIA:
            if z.value not in crit_raw:
                continue
            cp = f"{mp}.criteria.{z.value}"
            c = crit_raw[z.value]
            ckeys = ("exclude_outputs", "exclude_output_lags", "exclude_actuations", "exclude_actuation_lags", "exclude_coupling", "mapping")
            if not ck.obj(c, cp, (), ckeys):
                continue
            ex_out = c.get("exclude_outputs", [])
            if not isinstance(ex_out, list) or any(o not in outputs for o in ex_out):
                ck.error(f"{cp}.exclude_outputs", "must list known output names")
                ex_out = []
            retained = [o for o in outputs if o not in ex_out]
            mapping = None
            if "mapping" in c:
                mapping = _affine(ck, c["mapping"], f"{cp}.mapping", len(retained))
            elif z is not Criterion.TIME:
                ck.error(cp, "missing key 'mapping'")
            if z is not Criterion.TIME and order is not None and order.weights[z] > 0 and not retained:
                ck.error(f"{cp}.exclude_outputs", f"no retained outputs for weighted criterion {z.value}")
            if mapping is not None and len(ranges) == m_y and z is not Criterion.TIME:
                idx = [outputs.index(o) for o in retained]
                low = mapping.offset + sum(
                    min(a * ranges[j][0], a * ranges[j][1]) for a, j in zip(mapping.coefficients, idx)
                )
                if low < 0:
                    ck.error(f"{cp}.mapping", f"mapping can yield negative effort ({low:g}) over the output range")
            criteria[z] = CriterionProjection(
                exclude_outputs=tuple(sorted(set(ex_out), key=outputs.index)),
                exclude_output_lags=ck.ints(c.get("exclude_output_lags", []), f"{cp}.exclude_output_lags", 1, n_y),
                exclude_actuations=ck.ints(c.get("exclude_actuations", []), f"{cp}.exclude_actuations", 0, m_u - 1),
                exclude_actuation_lags=ck.ints(c.get("exclude_actuation_lags", []), f"{cp}.exclude_actuation_lags", 0, n_u),
                exclude_coupling=ck.ints(c.get("exclude_coupling", []), f"{cp}.exclude_coupling", 0, max(cdim - 1, -1)),
                mapping=mapping,
            )
    for z in (Criterion.ENERGY, Criterion.COST):
        if z not in criteria and isinstance(crit_raw, dict):
            ck.error(f"{mp}.criteria", f"missing criterion {z.value!r}")

    plant = None
    if "plant" in m:
        try:
            plant = parse_plant_spec(m["plant"], m_y=m_y, m_u=m_u, coupling_dim=cdim, strict=ck.strict)
        except ValueError as exc:
            ck.error(f"{mp}.plant", str(exc))
    if len(ck.issues) != n_issues:
        return None
    return ProcessModelSpec(
        id=ident,
        outputs=tuple(outputs),
        output_range=tuple(ranges),
        actuations=m_u,
        n_y=n_y,
        n_u=n_u,
        coupling_dim=cdim,
        hidden=hidden,
        horizon=horizon,
        seed=seed,
        criteria=criteria,
        plant=plant,
        training=training,
    )


def validate_process_model_spec(raw: Mapping[str, Any], *, strict: bool = True) -> ProcessModelSpec:
    """Validate one process-model declaration on its own (used by the model store)."""
    ck = _Checker(strict)
    keys = ("n_y", "n_u", "coupling_dim", "hidden", "horizon", "seed", "criteria", "plant", "training")
    spec = None
    if ck.obj(raw, "$", ("id", "outputs", "output_range", "actuations"), keys):
        spec = _parse_process_model(ck, raw, "$", None)
    if ck.issues or spec is None:
        raise ScenarioError(ck.issues)
    return spec


def _parse_modules(ck: _Checker, raw: Any, path: str, layout: LayoutGraph, models: Mapping[str, ProcessModelSpec]) -> tuple[Cppm, ...]:
    if not isinstance(raw, list) or not raw:
        ck.error(path, "expected a non-empty list of modules")
        return ()
    ck.unique([(f"{path}[{i}].id", m.get("id")) for i, m in enumerate(raw) if isinstance(m, dict)], "module")
    modules = []
    placed: list[tuple[str, str]] = []
    for i, m in enumerate(raw):
        mp = f"{path}[{i}]"
        if not ck.obj(m, mp, ("id", "configurations", "current_configuration"), ("location",)):
            continue
        ident = ck.string(m["id"], f"{mp}.id")
        location = m.get("location")
        if location is not None:
            if location not in layout.locations:
                ck.error(f"{mp}.location", f"unknown location {location!r}")
            placed.append((f"{mp}.location", location))
        cfgs_raw = m["configurations"]
        if not isinstance(cfgs_raw, list) or not cfgs_raw:
            ck.error(f"{mp}.configurations", "expected a non-empty list")
            continue
        cfg_ids = [c.get("id") for c in cfgs_raw if isinstance(c, dict)]
        ck.unique([(f"{mp}.configurations[{j}].id", c) for j, c in enumerate(cfg_ids)], "configuration")
        cfgs = []
        for j, c in enumerate(cfgs_raw):
            cfg = _parse_configuration(ck, c, f"{mp}.configurations[{j}]", cfg_ids, models)
            if cfg is not None:
                cfgs.append(cfg)
        current = m["current_configuration"]
        if current not in cfg_ids:
            ck.error(f"{mp}.current_configuration", f"unknown configuration {current!r}")
        if ident is not None:
            modules.append(Cppm(ident, tuple(cfgs), current, location))
    seen: dict[str, str] = {}
    for p, loc in placed:
        if loc in seen:
            ck.error(p, f"location {loc!r} already holds another module")
        seen[loc] = p
    return tuple(modules)


def _parse_configuration(ck: _Checker, c: Any, cp: str, cfg_ids: list, models: Mapping[str, ProcessModelSpec]) -> ModuleConfiguration | None:
    if not ck.obj(c, cp, ("id", "operators"), ("standby", "standby_mapping", "switch_from")):
        return None
    standby: dict[Criterion, float] = {}
    sb = c.get("standby", {})
    if ck.obj(sb, f"{cp}.standby", (), ("energy", "cost")):
        for z in (Criterion.ENERGY, Criterion.COST):
            v = ck.number(sb.get(z.value, 0.0), f"{cp}.standby.{z.value}", minimum=0.0)
            if v is not None:
                standby[z] = v
    smap: dict[Criterion, AffineMap] = {}
    sm = c.get("standby_mapping", {})
    if ck.obj(sm, f"{cp}.standby_mapping", (), ("energy", "cost")):
        for z in (Criterion.ENERGY, Criterion.COST):
            if z.value not in sm:
                smap[z] = IDENTITY_MAP
                continue
            zp = f"{cp}.standby_mapping.{z.value}"
            if not ck.obj(sm[z.value], zp, ("coefficient",), ("offset",)):
                continue
            a = ck.number(sm[z.value]["coefficient"], f"{zp}.coefficient")
            b = ck.number(sm[z.value].get("offset", 0.0), f"{zp}.offset")
            if a is None or b is None:
                continue
            if a * standby.get(z, 0.0) + b < 0:
                ck.error(zp, "standby mapping yields negative effort")
            smap[z] = AffineMap((a,), b)
    switch: dict[str, EffortVector] = {}
    sw = c.get("switch_from", {})
    if isinstance(sw, dict):
        for other in cfg_ids:
            if other == c["id"]:
                continue
            if other not in sw:
                ck.error(f"{cp}.switch_from", f"missing switch effort from configuration {other!r}")
                continue
            e = ck.effort(sw[other], f"{cp}.switch_from.{other}")
            if e is not None:
                switch[other] = e
        for other in sw:
            if other not in cfg_ids:
                ck.error(f"{cp}.switch_from.{other}", "unknown configuration")
            elif other == c["id"]:
                e = ck.effort(sw[other], f"{cp}.switch_from.{other}")
                if e is not None and e != EffortVector.zero():
                    ck.error(f"{cp}.switch_from.{other}", "switch effort to itself must be zero")
    else:
        ck.error(f"{cp}.switch_from", "expected an object")
    ops = []
    if not isinstance(c["operators"], list):
        ck.error(f"{cp}.operators", "expected a list")
    else:
        ck.unique([(f"{cp}.operators[{k}].id", o.get("id")) for k, o in enumerate(c["operators"]) if isinstance(o, dict)], "operator")
        for k, o in enumerate(c["operators"]):
            op = _parse_operator(ck, o, f"{cp}.operators[{k}]", models)
            if op is not None:
                ops.append(op)
    ident = ck.string(c["id"], f"{cp}.id")
    if ident is None:
        return None
    return ModuleConfiguration(ident, tuple(ops), standby, smap, switch)


def _parse_operator(ck: _Checker, o: Any, op_path: str, models: Mapping[str, ProcessModelSpec]) -> ProcessOperator | None:
    if not ck.obj(o, op_path, ("id", "input", "output", "parameters", "duration", "model")):
        return None
    n_issues = len(ck.issues)
    ident = ck.string(o["id"], f"{op_path}.id")
    inp = ck.state(o["input"], f"{op_path}.input")
    out = ck.state(o["output"], f"{op_path}.output")
    params = []
    if not isinstance(o["parameters"], list) or not o["parameters"]:
        ck.error(f"{op_path}.parameters", "expected a non-empty list")
    else:
        for k, p in enumerate(o["parameters"]):
            pp = f"{op_path}.parameters[{k}]"
            if not ck.obj(p, pp, ("name", "bounds")):
                continue
            b = p["bounds"]
            if not isinstance(b, list) or len(b) != 2:
                ck.error(f"{pp}.bounds", "expected [lo, hi]")
                continue
            lo, hi = ck.number(b[0], f"{pp}.bounds[0]"), ck.number(b[1], f"{pp}.bounds[1]")
            if lo is None or hi is None:
                continue
            if lo > hi:
                ck.error(f"{pp}.bounds", "empty parameter range (lo > hi)")
                continue
            params.append(Parameter(str(p["name"]), lo, hi))
    duration = None
    dp = f"{op_path}.duration"
    if ck.obj(o["duration"], dp, ("base",), ("coefficients",)):
        base = ck.number(o["duration"]["base"], f"{dp}.base")
        coeffs = o["duration"].get("coefficients", [0.0] * len(params))
        if not isinstance(coeffs, list) or len(coeffs) != len(params):
            ck.error(f"{dp}.coefficients", f"expected {len(params)} coefficients")
        else:
            cs = [ck.number(v, f"{dp}.coefficients[{k}]") for k, v in enumerate(coeffs)]
            if base is not None and None not in cs:
                duration = DurationModel(base, tuple(cs))
                shortest = base + sum(min(a * p.lo, a * p.hi) for a, p in zip(cs, params))
                if shortest < 0.1 - 1e-12:
                    ck.error(dp, f"service duration can drop to {shortest:g} s (< 0.1 s) within the parameter bounds")
    model = o["model"]
    if model not in models:
        ck.error(f"{op_path}.model", f"unknown process model {model!r}")
    elif models[model].actuations != len(params):
        ck.error(f"{op_path}.model", f"process model {model!r} expects {models[model].actuations} actuations, operator has {len(params)} parameters")
    if len(ck.issues) != n_issues or None in (ident, inp, out, duration):
        return None
    return ProcessOperator(ident, inp, out, tuple(params), duration, model)


def load_scenario(path: str | Path, *, strict: bool = True) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return validate_scenario(doc, strict=strict)


def dump_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_json(), indent=2, sort_keys=False) + "\n", encoding="utf-8")
