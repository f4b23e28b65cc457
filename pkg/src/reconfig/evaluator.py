"""Cost-utility analysis over candidate system configurations and selection."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .model import CRITERIA, CriteriaWeights, Criterion, EffortVector, SystemConfiguration


def total_effort(reconfiguration: EffortVector, production: EffortVector) -> EffortVector:
    return reconfiguration + production


def evaluation_values(totals: Sequence[EffortVector | Sequence[float]]) -> list[dict[Criterion, float]]:
    """Per criterion: the smallest total maps to 1, the largest to 0, the rest linearly.

    A criterion on which all totals are equal gives every configuration 1.
    """
    if not totals:
        raise ValueError("need at least one configuration")
    rows = [tuple(t) for t in totals]
    out: list[dict[Criterion, float]] = [{} for _ in rows]
    for c, z in enumerate(CRITERIA):
        vals = [r[c] for r in rows]
        lo, hi = min(vals), max(vals)
        for i, a in enumerate(vals):
            if lo == hi or a == lo:
                r = 1.0
            elif a == hi:
                r = 0.0
            else:
                r = min(1.0, max(0.0, (a - hi) / (lo - hi)))
            out[i][z] = r
    return out


def utility(r: Mapping[Criterion, float] | Sequence[float], weights: CriteriaWeights) -> float:
    values = [r[z] for z in CRITERIA] if isinstance(r, Mapping) else list(r)
    v = 0.0
    for w, x in zip(weights, values, strict=True):
        v += w * x
    return min(1.0, max(0.0, v))


def _tie_key(cfg: SystemConfiguration):
    total = cfg.total if cfg.total is not None else EffortVector()
    return (
        -(cfg.utility or 0.0),
        total.time,
        cfg.sequence_key,
        tuple(sorted(cfg.layout.items())),
        tuple(tuple(p) for p in (cfg.parameters or ())),
    )


@dataclass(frozen=True)
class RankedConfigurations:
    configurations: tuple[SystemConfiguration, ...]
    selected: int = 0

    @property
    def best(self) -> SystemConfiguration:
        return self.configurations[self.selected]


def rank(candidates: Sequence[SystemConfiguration], weights: CriteriaWeights) -> RankedConfigurations:
    """Fill totals, evaluation values and utilities; sort best first.

    Each candidate needs ``production`` set. Ties in utility go to the lower
    total time, then to the lexicographically smaller sequence.
    """
    if not candidates:
        raise ValueError("no candidate configurations")
    totals = [total_effort(c.reconfiguration, c.production) for c in candidates]
    rs = evaluation_values(totals)
    filled = [replace(c, total=t, evaluation=r, utility=utility(r, weights)) for c, t, r in zip(candidates, totals, rs)]
    return RankedConfigurations(tuple(sorted(filled, key=_tie_key)), 0)


def select(ranked: RankedConfigurations | Sequence[SystemConfiguration]) -> SystemConfiguration:
    """The configuration with the highest utility (deterministic tie-break)."""
    configs = ranked.configurations if isinstance(ranked, RankedConfigurations) else tuple(ranked)
    if not configs:
        raise ValueError("no candidate configurations")
    return min(configs, key=_tie_key)
