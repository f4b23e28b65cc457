"""Layout variants and system-level reconfiguration effort."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

from .model import Cppm, EffortVector, LayoutGraph, Step


@dataclass(frozen=True)
class LayoutVariant:
    assignment: tuple[tuple[str, str], ...]  # (module, location) in first-use order
    transports: tuple[tuple[str, str], ...]  # location pairs between consecutive inter-module steps

    @property
    def placement(self) -> dict[str, str]:
        return dict(self.assignment)


def sequence_modules(steps: Sequence[Step]) -> list[str]:
    """Distinct modules of a sequence in order of first use."""
    return list(dict.fromkeys(s.module for s in steps))


def _hops(steps: Sequence[Step]) -> list[tuple[str, str]]:
    return [(a.module, b.module) for a, b in zip(steps, steps[1:]) if a.module != b.module]


def enumerate_layouts(steps: Sequence[Step], graph: LayoutGraph, occupied: Iterable[str] = ()) -> list[LayoutVariant]:
    """Brute force over injective placements of the sequence's modules.

    A placement is kept when every consecutive inter-module step is served by
    a transport edge. ``occupied`` locations (held by modules outside the
    sequence) are unavailable.
    """
    mods = sequence_modules(steps)
    free = [loc for loc in graph.locations if loc not in set(occupied)]
    hops = _hops(steps)
    variants = []
    for locs in itertools.permutations(free, len(mods)):
        place = dict(zip(mods, locs))
        if all(graph.adjacent(place[a], place[b]) for a, b in hops):
            variants.append(LayoutVariant(tuple(zip(mods, locs)), tuple((place[a], place[b]) for a, b in hops)))
    return variants


@lru_cache(maxsize=4096)
def _relocation(graph: LayoutGraph, a: str, b: str) -> EffortVector | None:
    # lexicographic (time, energy, cost) Dijkstra; fixed direction keeps the float sums symmetric
    src, dst = min(a, b), max(a, b)
    best = {src: (0.0, 0.0, 0.0)}
    heap = [((0.0, 0.0, 0.0), src)]
    done = set()
    while heap:
        cost, node = heapq.heappop(heap)
        if node in done:
            continue
        if node == dst:
            return EffortVector(*cost)
        done.add(node)
        for nxt, e in sorted(graph.neighbours(node), key=lambda item: item[0]):
            cand = (cost[0] + e.time, cost[1] + e.energy, cost[2] + e.cost)
            if nxt not in best or cand < best[nxt]:
                best[nxt] = cand
                heapq.heappush(heap, (cand, nxt))
    return None


def relocation_effort(graph: LayoutGraph, a: str | None, b: str) -> EffortVector | None:
    """Effort of moving a module from ``a`` to ``b``; zero if unmoved or not placed before, None if unreachable."""
    if a is None or a == b:
        return EffortVector.zero()
    return _relocation(graph, a, b)


def reconfiguration_effort(variant: LayoutVariant, modules: Sequence[Cppm], steps: Sequence[Step], graph: LayoutGraph) -> EffortVector | None:
    """System reconfiguration effort: configuration switches plus relocations.

    Returns None when some relocation is impossible (the variant is infeasible).
    Modules outside the sequence contribute nothing.
    """
    by_id: Mapping[str, Cppm] = {m.id: m for m in modules}
    target_cfg = {s.module: s.configuration for s in steps}
    total = EffortVector.zero()
    for module_id, loc in variant.assignment:
        module = by_id[module_id]
        total = total + module.configuration(target_cfg[module_id]).switch_effort(module.current_configuration)
        move = relocation_effort(graph, module.location, loc)
        if move is None:
            return None
        total = total + move
    return total
