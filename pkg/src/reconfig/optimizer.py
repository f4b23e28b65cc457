"""Simulation-based multi-criteria optimisation of production parameters.

Each configuration is first optimised for every criterion on its own; the
individual optima give the reference range of each criterion, which then
normalises the weighted single objective

    F(U) = sum_z w_z * (f_z(U) - f_z,min) / (f_z,max - f_z,min)

Search strategies only compare objective values, never inspect them, and walk
a candidate sequence fixed by the seed. A new strategy (e.g. a genetic
algorithm) only has to implement :class:`SearchStrategy`.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .des import ResolvedStep, simulate
from .model import CRITERIA, CriteriaWeights, Criterion, EffortVector, OptimizerSettings

log = logging.getLogger(__name__)

DEGENERATE_RANGE = 1e-9


class ConfigurationProblem:
    """Parameter space of one production sequence and its simulated efforts.

    ``U`` is flattened step by step; :meth:`split` undoes that. Evaluations are
    memoised on the exact parameter values.
    """

    def __init__(self, steps: Sequence[ResolvedStep], lot_size: int):
        self.steps = list(steps)
        self.lot_size = lot_size
        self.sizes = [len(s.operator.parameters) for s in self.steps]
        self.lower = np.array([p.lo for s in self.steps for p in s.operator.parameters])
        self.upper = np.array([p.hi for s in self.steps for p in s.operator.parameters])
        self._cache: dict[tuple[float, ...], EffortVector] = {}

    @property
    def dim(self) -> int:
        return len(self.lower)

    def split(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        return [x[a:b] for a, b in itertools.pairwise([0, *np.cumsum(self.sizes)])]

    def evaluate(self, x) -> EffortVector:
        key = tuple(float(v) for v in x)
        hit = self._cache.get(key)
        if hit is None:
            hit = simulate(self.steps, self.split(x), self.lot_size).efforts
            self._cache[key] = hit
        return hit


class SearchStrategy(Protocol):
    def search(self, objective: Callable[[np.ndarray], float], lower: np.ndarray, upper: np.ndarray, budget: int, rng: np.random.Generator) -> list[tuple[np.ndarray, float]]:
        """Evaluate candidates in a deterministic order; return the full trace."""


@dataclass(frozen=True)
class RandomPatternSearch:
    """Uniform random sampling, then coordinate pattern search with halving steps."""

    pattern_fraction: float = 0.3
    initial_step: float = 0.25

    def search(self, objective, lower, upper, budget, rng):
        n_random = max(1, int(round(budget * (1.0 - self.pattern_fraction))))
        trace: list[tuple[np.ndarray, float]] = []
        best_x, best_f = None, np.inf
        for _ in range(min(n_random, budget)):
            x = rng.uniform(lower, upper)
            fx = objective(x)
            trace.append((x, fx))
            if fx < best_f:
                best_x, best_f = x, fx
        span = upper - lower
        step = self.initial_step * span
        while len(trace) < budget and np.any(step > 1e-12 * np.maximum(span, 1.0)):
            improved = False
            for d in range(len(lower)):
                if step[d] == 0:
                    continue
                for sign in (1.0, -1.0):
                    if len(trace) >= budget:
                        break
                    x = best_x.copy()
                    x[d] = min(max(x[d] + sign * step[d], lower[d]), upper[d])
                    if x[d] == best_x[d]:
                        continue
                    fx = objective(x)
                    trace.append((x, fx))
                    if fx < best_f:
                        best_x, best_f = x, fx
                        improved = True
                        break
            if not improved:
                step = step / 2.0
        return trace


@dataclass(frozen=True)
class GridSearch:
    """Exhaustive evaluation of a regular grid (``points`` values per parameter); ignores the budget."""

    points: int = 5

    def grid(self, lower, upper) -> list[np.ndarray]:
        axes = [np.unique(np.linspace(lo, hi, self.points)) for lo, hi in zip(lower, upper)]
        return [np.array(p) for p in itertools.product(*axes)]

    def search(self, objective, lower, upper, budget, rng):
        return [(x, objective(x)) for x in self.grid(lower, upper)]


def make_strategy(settings: OptimizerSettings) -> SearchStrategy:
    if settings.strategy == "grid":
        return GridSearch(settings.grid_points)
    return RandomPatternSearch(settings.pattern_fraction)


def _incumbent(trace: list[tuple[np.ndarray, float]]) -> int:
    best = 0
    for i, (_, fx) in enumerate(trace):
        if fx < trace[best][1]:
            best = i
    return best


@dataclass(frozen=True)
class SingleOutcome:
    criterion: Criterion
    parameters: np.ndarray
    efforts: EffortVector
    evaluations: int


def optimize_single(problem: ConfigurationProblem, z: Criterion | str, budget: int, seed: int, strategy: SearchStrategy | None = None) -> SingleOutcome:
    """Minimise one criterion; returns the best point and all efforts there."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    z = Criterion(z)
    strategy = strategy or RandomPatternSearch()
    trace = strategy.search(lambda x: problem.evaluate(x)[z], problem.lower, problem.upper, budget, np.random.default_rng(seed))
    best = _incumbent(trace)
    x = trace[best][0]
    return SingleOutcome(z, x, problem.evaluate(x), len(trace))


@dataclass(frozen=True)
class CriterionRange:
    low: float
    high: float
    degenerate: bool = False

    @property
    def width(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class NormalizationRanges:
    ranges: Mapping[Criterion, CriterionRange]

    def __getitem__(self, z: Criterion | str) -> CriterionRange:
        return self.ranges[Criterion(z)]

    def to_json(self) -> dict:
        return {z.value: {"min": r.low, "max": r.high, "degenerate": r.degenerate} for z, r in self.ranges.items()}


def normalization_ranges(results: Mapping[Criterion, EffortVector]) -> NormalizationRanges:
    """Reference range per criterion from the individual optima.

    The minimum of z is f_z at the z-optimum; the maximum is the largest f_z
    among the optima of the *other* criteria, clamped up to the minimum if it
    falls below it.
    """
    out = {}
    for z in CRITERIA:
        low = results[z][z]
        high = max(results[other][z] for other in CRITERIA if other is not z)
        if high < low:
            log.warning("range of %s inverted (min %g > max %g); clamped", z.value, low, high)
            high = low
        out[z] = CriterionRange(low, high, high - low < DEGENERATE_RANGE)
    return NormalizationRanges(out)


def weighted_objective(efforts: EffortVector, weights: CriteriaWeights, ranges: NormalizationRanges) -> float:
    total = 0.0
    for z in CRITERIA:
        r = ranges[z]
        if r.degenerate:
            continue
        total += weights[z] * (efforts[z] - r.low) / r.width
    return total


@dataclass(frozen=True)
class OptimizationOutcome:
    parameters: np.ndarray
    objective: float
    efforts: EffortVector
    evaluations: int
    seed: int
    trace: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()


def optimize_weighted(problem: ConfigurationProblem, weights: CriteriaWeights, ranges: NormalizationRanges, budget: int, seed: int, strategy: SearchStrategy | None = None) -> OptimizationOutcome:
    """Minimise the normalised weighted sum; degenerate ranges contribute nothing."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    strategy = strategy or RandomPatternSearch()
    notes = tuple(f"degenerate range for {z.value}; term ignored" for z in CRITERIA if ranges[z].degenerate)
    for n in notes:
        log.warning(n)
    trace = strategy.search(
        lambda x: weighted_objective(problem.evaluate(x), weights, ranges),
        problem.lower,
        problem.upper,
        budget,
        np.random.default_rng(seed),
    )
    best = _incumbent(trace)
    x, fx = trace[best]
    return OptimizationOutcome(x, fx, problem.evaluate(x), len(trace), seed, tuple(f for _, f in trace), notes)


@dataclass(frozen=True)
class ConfigurationOptimum:
    """Everything the parameter optimisation produced for one sequence."""

    singles: Mapping[Criterion, SingleOutcome]
    ranges: NormalizationRanges
    weighted: OptimizationOutcome

    @property
    def parameters(self) -> np.ndarray:
        return self.weighted.parameters

    @property
    def production(self) -> EffortVector:
        return self.weighted.efforts

    def to_json(self, problem: ConfigurationProblem | None = None) -> dict:
        return {
            "singles": {
                z.value: {"parameters": s.parameters.tolist(), "efforts": s.efforts.to_json(), "evaluations": s.evaluations}
                for z, s in self.singles.items()
            },
            "ranges": self.ranges.to_json(),
            "objective": self.weighted.objective,
            "evaluations": self.weighted.evaluations,
            "warnings": list(self.weighted.warnings),
        }


def optimize_configuration(problem: ConfigurationProblem, weights: CriteriaWeights, settings: OptimizerSettings, seed: int) -> ConfigurationOptimum:
    """Three single-criterion runs, their ranges, then the weighted run, all with ``seed``."""
    strategy = make_strategy(settings)
    singles = {z: optimize_single(problem, z, settings.budget_single, seed, strategy) for z in CRITERIA}
    ranges = normalization_ranges({z: s.efforts for z, s in singles.items()})
    weighted = optimize_weighted(problem, weights, ranges, settings.budget_weighted, seed, strategy)
    return ConfigurationOptimum(singles, ranges, weighted)

