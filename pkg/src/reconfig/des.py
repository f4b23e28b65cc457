"""Discrete-event simulation of one system configuration.

Each module is a two-state machine (standby / service). The lot flows through
the production sequence piece by piece with single-piece buffers between
consecutive steps. A module starts a service cycle when the input piece is
available and the buffer behind it is free; the free slot is reserved at the
start, so a finished piece never blocks its module. Among startable steps the
most downstream one goes first.

Time runs on an integer grid of 0.1 s. Service durations are rounded to that
grid and the standby tick is the greatest common divisor of all service
durations, so the whole makespan of every module is covered by whole service
and standby cycles.

Per-cycle criterion outputs come from free-running prediction of the process
models; the coupling input of a step is the predecessor step's output one
cycle earlier. With pipeline cycle index k = piece + step (both 1-based,
minus one), that is the predecessor's output for the same piece.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .model import CRITERIA, Criterion, EffortVector, ModuleConfiguration, ProcessOperator, Scenario, Step
from .narx import NarxModel, ProcessHistory, actuation_matrix, estimate_disturbance, f_row, project_criterion, service_effort

UNITS_PER_SECOND = 10
BOUNDS_TOL = 1e-9


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class ResolvedStep:
    module: str
    configuration: ModuleConfiguration
    operator: ProcessOperator
    model: NarxModel


def model_key(step: Step) -> str:
    return f"{step.module}/{step.configuration}/{step.operator}"


def resolve_steps(scenario: Scenario, steps: Sequence[Step], models: Mapping[str, NarxModel]) -> list[ResolvedStep]:
    out = []
    for s in steps:
        cfg = scenario.module(s.module).configuration(s.configuration)
        op = cfg.operator(s.operator)
        key = model_key(s)
        if key not in models:
            raise SimulationError(f"no process model loaded for {key}")
        out.append(ResolvedStep(s.module, cfg, op, models[key]))
    return out


def quantize(seconds: float) -> int:
    """Duration in grid units (0.1 s), at least one unit."""
    return max(1, int(round(seconds * UNITS_PER_SECOND)))


def standby_effort(config: ModuleConfiguration, s: int, z: Criterion | str, tick: float = 1.0) -> float:
    """Standby effort over ``s`` standby cycles of ``tick`` seconds.

    The per-cycle constant is the configuration's standby rate times the tick;
    the mapping does not depend on the cycle index, so the sum is ``s`` times
    the mapped constant.
    """
    if s < 0:
        raise ValueError("standby cycle count must be >= 0")
    z = Criterion(z)
    if z is Criterion.TIME:
        return s * tick
    c = config.standby.get(z, 0.0) * tick
    return s * config.standby_mapping[z]((c,))


@dataclass(frozen=True)
class TraceEvent:
    time: float
    module: str
    event: str
    cycle: int


@dataclass
class ModuleResult:
    module: str
    service_cycles: int
    standby_cycles: int
    service_units: int
    standby_units: int
    trajectories: dict[Criterion, list[np.ndarray]]
    service: EffortVector
    standby: EffortVector

    @property
    def total(self) -> EffortVector:
        return self.standby + self.service


@dataclass
class SimulationResult:
    modules: dict[str, ModuleResult]
    efforts: EffortVector
    makespan_units: int
    tick_units: int
    outputs: list[list[np.ndarray]]  # per step, per piece: full output estimate
    couplings: list[list[np.ndarray]]  # per step, per piece: coupling input used
    services: list[tuple[int, int, int, int]]  # (step, piece, start, end) in grid units
    events: list[TraceEvent] = field(default_factory=list)

    @property
    def makespan(self) -> float:
        return self.makespan_units / UNITS_PER_SECOND

    @property
    def tick(self) -> float:
        return self.tick_units / UNITS_PER_SECOND


def schedule(durations: Sequence[int], modules: Sequence[str], lot_size: int) -> tuple[list[tuple[int, int, int, int]], int]:
    """Flow-shop schedule on the integer time grid; returns services and makespan."""
    n = len(durations)
    buffer: list[int | None] = [None] * n  # buffer[i]: piece waiting for step i
    reserved = [False] * n
    running: dict[str, tuple[int, int, int]] = {}
    released = done = t = 0
    services = []
    while done < lot_size:
        started = True
        while started:
            started = False
            for i in reversed(range(n)):
                m = modules[i]
                if m in running:
                    continue
                if (released >= lot_size) if i == 0 else (buffer[i] is None):
                    continue
                if i < n - 1 and (buffer[i + 1] is not None or reserved[i + 1]):
                    continue
                if i == 0:
                    piece, released = released, released + 1
                else:
                    piece, buffer[i] = buffer[i], None
                if i < n - 1:
                    reserved[i + 1] = True
                running[m] = (t + durations[i], i, piece)
                services.append((i, piece, t, t + durations[i]))
                started = True
        if not running:
            raise SimulationError("schedule deadlocked")
        t = min(end for end, _, _ in running.values())
        for m in [m for m, (end, _, _) in running.items() if end == t]:
            _, i, piece = running.pop(m)
            if i == n - 1:
                done += 1
            else:
                buffer[i + 1] = piece
                reserved[i + 1] = False
    return services, t


def _fit(vec: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(dim)
    k = min(dim, len(vec))
    out[:k] = vec[:k]
    return out


def _check_parameters(steps: Sequence[ResolvedStep], parameters) -> list[np.ndarray]:
    if len(parameters) != len(steps):
        raise SimulationError(f"expected {len(steps)} parameter vectors, got {len(parameters)}")
    out = []
    for i, (rs, u) in enumerate(zip(steps, parameters)):
        u = np.asarray(u, dtype=float).reshape(-1)
        if rs.model.m_u != len(rs.operator.parameters):
            raise SimulationError(f"step {i}: model {rs.model.name!r} expects {rs.model.m_u} actuations, operator {rs.operator.id!r} has {len(rs.operator.parameters)}")
        if u.shape != (len(rs.operator.parameters),):
            raise SimulationError(f"step {i}: expected {len(rs.operator.parameters)} parameters, got {u.shape[0]}")
        for p, x in zip(rs.operator.parameters, u):
            if not (p.lo - BOUNDS_TOL <= x <= p.hi + BOUNDS_TOL):
                raise SimulationError(f"step {i}: parameter {p.name}={x} outside [{p.lo}, {p.hi}]")
        out.append(u)
    return out


def simulate(steps: Sequence[ResolvedStep], parameters: Sequence, lot_size: int, *, trace: bool = False) -> SimulationResult:
    """Simulate the lot through the sequence for a fixed parameter set U (one vector per step)."""
    if not steps:
        raise SimulationError("empty production sequence")
    if lot_size < 1:
        raise SimulationError("lot size must be >= 1")
    params = _check_parameters(steps, parameters)
    durations = [quantize(rs.operator.duration(u)) for rs, u in zip(steps, params)]
    tick = math.gcd(*durations)
    step_modules = [rs.module for rs in steps]
    services, makespan = schedule(durations, step_modules, lot_size)

    outputs: list[list[np.ndarray]] = []
    couplings: list[list[np.ndarray]] = []
    step_traj: list[dict[Criterion, list[np.ndarray]]] = []
    for i, (rs, u) in enumerate(zip(steps, params)):
        model = rs.model
        views = [project_criterion(model, z, weight=0.0) for z in (Criterion.ENERGY, Criterion.COST)]
        masks = np.vstack([np.ones_like(views[0].mask)] + [v.mask for v in views])
        lo = np.array([r[0] for r in model.spec.output_range])
        hi = np.array([r[1] for r in model.spec.output_range])
        window = model.disturbance_window if model.disturbance_window is not None else None
        hist = ProcessHistory.start(model, window)
        outs, ws = [], []
        traj: dict[Criterion, list[np.ndarray]] = {Criterion.ENERGY: [], Criterion.COST: []}
        for j in range(lot_size):
            k = j + i + 1
            w = _fit(outputs[i - 1][j], model.coupling_dim) if i else np.zeros(model.coupling_dim)
            hist = ProcessHistory(hist.outputs, hist.actuations, hist.disturbances, w)
            du_hat = estimate_disturbance(model, hist, k)
            row = f_row(model, hist.outputs, actuation_matrix(hist, u, du_hat), w, k)
            xn = (row - model.f_in.shift) / model.f_in.scale
            raw = model.f(xn[None, :] * masks) * model.f_out.scale + model.f_out.shift
            clipped = np.clip(raw, lo, hi)
            y_hat = clipped[0]
            for view, r in zip(views, clipped[1:]):
                traj[view.criterion].append(r[list(view.outputs)])
            outs.append(y_hat)
            ws.append(w)
            hist = hist.advance(y_hat, u, du_hat)
        outputs.append(outs)
        couplings.append(ws)
        step_traj.append(traj)

    for i in range(1, len(steps)):
        for j in range(lot_size):
            if not np.array_equal(couplings[i][j], _fit(outputs[i - 1][j], steps[i].model.coupling_dim)):
                raise SimulationError(f"coupling link broken at step {i}, piece {j}")

    modules: dict[str, ModuleResult] = {}
    for m in dict.fromkeys(step_modules):
        idx = [i for i, sm in enumerate(step_modules) if sm == m]
        cfg = steps[idx[0]].configuration
        busy = sum(end - start for i, _, start, end in services if i in idx)
        p = sum(1 for i, *_ in services if i in idx)
        standby_units = makespan - busy
        s = standby_units // tick
        if s * tick != standby_units:
            raise SimulationError("standby time is not a whole number of ticks")
        traj = {z: [y for i in idx for y in step_traj[i][z]] for z in (Criterion.ENERGY, Criterion.COST)}
        service = EffortVector(
            time=busy / UNITS_PER_SECOND,
            energy=sum(service_effort(steps[i].model, step_traj[i][Criterion.ENERGY], Criterion.ENERGY) for i in idx),
            cost=sum(service_effort(steps[i].model, step_traj[i][Criterion.COST], Criterion.COST) for i in idx),
        )
        t_s = tick / UNITS_PER_SECOND
        standby = EffortVector(*(standby_effort(cfg, s, z, t_s) for z in CRITERIA))
        modules[m] = ModuleResult(m, p, s, busy, standby_units, traj, service, standby)

    efforts = EffortVector(
        time=makespan / UNITS_PER_SECOND,
        energy=sum(r.total.energy for r in modules.values()),
        cost=sum(r.total.cost for r in modules.values()),
    )
    result = SimulationResult(modules, efforts, makespan, tick, outputs, couplings, services)
    if trace:
        result.events = _trace(services, step_modules, makespan)
    return result


def _trace(services, step_modules, makespan) -> list[TraceEvent]:
    events = []
    for m in dict.fromkeys(step_modules):
        busy = sorted((start, end) for i, _, start, end in services if step_modules[i] == m)
        t = n_service = n_standby = 0
        for start, end in busy + [(makespan, makespan)]:
            if start > t:
                n_standby += 1
                events.append(TraceEvent(t / UNITS_PER_SECOND, m, "standby_start", n_standby))
                events.append(TraceEvent(start / UNITS_PER_SECOND, m, "standby_end", n_standby))
            if end > start:
                n_service += 1
                events.append(TraceEvent(start / UNITS_PER_SECOND, m, "service_start", n_service))
                events.append(TraceEvent(end / UNITS_PER_SECOND, m, "service_end", n_service))
            t = end
    return sorted(events, key=lambda e: (e.time, e.module, e.event.endswith("start"), e.cycle))


def write_trace(events: Sequence[TraceEvent], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "module", "event", "cycle"])
        for e in events:
            writer.writerow([f"{e.time:.1f}", e.module, e.event, e.cycle])
