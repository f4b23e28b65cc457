"""Reconfiguration demand and alternative production sequences.

Sequences are built back to front: starting from the desired output, every
module offers the operators (in any of its configurations) whose output
satisfies the current frontier; each offer opens a branch whose new frontier
is that operator's required input. A branch is complete once the order's
input state satisfies its frontier.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import Cppm, ProductionOrder, StateDescription, Step, state_satisfies

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchLimits:
    max_depth: int = 8
    max_branches: int = 10_000

    def __post_init__(self):
        if self.max_depth < 1 or self.max_branches < 1:
            raise ValueError("search limits must be positive")


@dataclass(frozen=True)
class SequenceDraft:
    steps: tuple[Step, ...]  # forward order
    frontier: StateDescription
    depth: int

    @property
    def key(self) -> tuple[tuple[str, str, str], ...]:
        return tuple((s.module, s.configuration, s.operator) for s in self.steps)


@dataclass(frozen=True)
class DemandResult:
    demand: bool
    sequences: tuple[tuple[Step, ...], ...]


def module_level_alternatives(module: Cppm, target: StateDescription, configurations: Iterable[str] | None = None) -> list[tuple[str, str]]:
    """(configuration-id, operator-id) pairs whose operator output satisfies ``target``."""
    allowed = None if configurations is None else set(configurations)
    found = []
    for cfg in module.configurations:
        if allowed is not None and cfg.id not in allowed:
            continue
        for op in cfg.operators:
            if state_satisfies(op.output, target):
                found.append((cfg.id, op.id))
    return sorted(found)


def generate_alternatives(
    modules: Sequence[Cppm],
    order: ProductionOrder,
    limits: SearchLimits = SearchLimits(),
    *,
    current_only: bool = False,
    pruned: list[str] | None = None,
) -> list[SequenceDraft]:
    """All complete production sequences reachable by backward chaining.

    A frontier already seen on the current branch is not expanded again, so
    cyclic operators terminate. Branches cut by ``limits`` are reported in
    ``pruned`` (and logged) rather than raising. A module keeps a single
    configuration within one sequence.
    """
    modules = sorted(modules, key=lambda m: m.id)
    allowed = {m.id: ({m.current_configuration} if current_only else None) for m in modules}
    complete: dict[tuple, SequenceDraft] = {}
    expansions = 0
    notes = pruned if pruned is not None else []

    def note(msg: str) -> None:
        notes.append(msg)
        log.warning(msg)

    def expand(frontier: StateDescription, suffix: tuple[Step, ...], seen: frozenset, chosen: dict[str, str]) -> bool:
        nonlocal expansions
        if state_satisfies(order.input, frontier):
            draft = SequenceDraft(suffix, frontier, len(suffix))
            complete.setdefault(draft.key, draft)
            return True
        if len(suffix) >= limits.max_depth:
            note(f"depth limit {limits.max_depth} reached on branch {[s.operator for s in suffix]}")
            return True
        for module in modules:
            for cfg_id, op_id in module_level_alternatives(module, frontier, allowed[module.id]):
                if chosen.get(module.id, cfg_id) != cfg_id:
                    continue
                nxt = module.configuration(cfg_id).operator(op_id).input
                if nxt in seen:
                    continue
                if expansions >= limits.max_branches:
                    note(f"branch limit {limits.max_branches} reached; search truncated")
                    return False
                expansions += 1
                step = Step(module.id, cfg_id, op_id)
                if not expand(nxt, (step,) + suffix, seen | {nxt}, {**chosen, module.id: cfg_id}):
                    return False
        return True

    expand(order.output, (), frozenset({order.output}), {})
    return sorted(complete.values(), key=lambda d: (d.depth, d.key))


def identify_demand(modules: Sequence[Cppm], order: ProductionOrder, limits: SearchLimits = SearchLimits()) -> DemandResult:
    """Search sequences using only each module's current configuration."""
    drafts = generate_alternatives(modules, order, limits, current_only=True)
    return DemandResult(demand=not drafts, sequences=tuple(d.steps for d in drafts))


def forward_execute(modules: Sequence[Cppm], start: StateDescription, steps: Sequence[Step]) -> StateDescription | None:
    """Apply ``steps`` from ``start``; None if some operator's input requirement is not met."""
    by_id = {m.id: m for m in modules}
    state = start
    for step in steps:
        op = by_id[step.module].configuration(step.configuration).operator(step.operator)
        if not state_satisfies(state, op.input):
            return None
        state = op.output
    return state
