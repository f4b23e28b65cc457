import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import config, constant_model, op, seeded_model
from reconfig.des import ResolvedStep, SimulationError, quantize, schedule, simulate, standby_effort, write_trace
from reconfig.model import AffineMap, Criterion


def step(module, seconds, energy=5.0, cost=1.0, standby=(0.0, 0.0), model=None, coupling_dim=0):
    cfg = config("c", [op("o", {}, {}, base=seconds)], standby=standby)
    return ResolvedStep(module, cfg, cfg.operators[0], model or constant_model(energy, cost, coupling_dim))


def params(steps):
    return [np.array([0.5])] * len(steps)


def test_single_module_hand_trace():
    steps = [step("A", 2.0)]
    r = simulate(steps, params(steps), 3)
    a = r.modules["A"]
    assert r.makespan == 6.0 and a.service_cycles == 3 and a.standby_cycles == 0
    assert r.efforts.time == 6.0
    assert r.efforts.energy == 15.0 and r.efforts.cost == 3.0


def test_two_module_line_hand_trace():
    steps = [step("A", 2.0), step("B", 3.0, coupling_dim=2)]
    r = simulate(steps, params(steps), 1)
    assert r.makespan == 5.0 and r.tick == 1.0
    assert r.modules["A"].standby_cycles == 3  # waits while B works
    assert r.modules["B"].standby_cycles == 2  # waits for the first piece
    assert r.services == [(0, 0, 0, 20), (1, 0, 20, 50)]


def test_energy_sum_of_service_and_standby():
    cfg = config("c", [op("o", {}, {})], standby=(1.0, 0.0))
    assert standby_effort(cfg, 4, Criterion.ENERGY) == 4.0
    # three service cycles at 5 J plus four standby cycles at 1 J
    steps = [step("A", 1.0, energy=5.0, standby=(1.0, 0.0)), step("B", 3.0, energy=0.0, coupling_dim=2)]
    r = simulate(steps, params(steps), 3)
    a = r.modules["A"]
    assert a.service_cycles == 3
    expected_standby = a.standby_cycles * 1.0 * r.tick
    assert a.total.energy == pytest.approx(15.0 + expected_standby, abs=1e-12)


@pytest.mark.parametrize("rate, s, coefficient, expected", [(0.5, 4, 1.0, 2.0), (0.5, 0, 1.0, 0.0), (0.5, 3, 2.0, 3.0)])
def test_standby_effort_examples(rate, s, coefficient, expected):
    cfg = config("c", [op("o", {}, {})], standby=(rate, 0.0))
    cfg = type(cfg)(cfg.id, cfg.operators, cfg.standby, {Criterion.ENERGY: AffineMap((coefficient,)), Criterion.COST: AffineMap((1.0,))}, cfg.switch_from)
    assert standby_effort(cfg, s, Criterion.ENERGY) == expected


def test_time_standby_is_tick_count():
    cfg = config("c", [op("o", {}, {})])
    assert standby_effort(cfg, 7, Criterion.TIME, tick=0.5) == 3.5


def test_durations_snap_to_tenth_seconds():
    assert quantize(2.04) == 20 and quantize(0.01) == 1


def test_out_of_bounds_parameters_rejected():
    steps = [step("A", 2.0)]
    with pytest.raises(SimulationError, match="outside"):
        simulate(steps, [np.array([1.5])], 1)
    with pytest.raises(SimulationError):
        simulate(steps, params(steps), 0)


def start_times(durations, lot):
    """Blocking flow line with single-piece buffers, earliest-start recurrence."""
    n = len(durations)
    s = [[0] * lot for _ in range(n)]
    c = [[0] * lot for _ in range(n)]
    for j in range(lot):
        for i in range(n):
            t = 0
            if i:
                t = max(t, c[i - 1][j])
            if j:
                t = max(t, c[i][j - 1])
                if i < n - 1:
                    t = max(t, s[i + 1][j - 1])
            s[i][j] = t
            c[i][j] = t + durations[i]
    return s, c[-1][-1]


durations_units = st.integers(1, 50)


@settings(max_examples=200, deadline=None)
@given(st.lists(durations_units, min_size=1, max_size=3), st.integers(1, 5))
def test_schedule_matches_recurrence(durations, lot):
    mods = [f"M{i}" for i in range(len(durations))]
    services, makespan = schedule(durations, mods, lot)
    s, expected = start_times(durations, lot)
    assert makespan == expected
    assert sorted((i, p, a) for i, p, a, _ in services) == sorted((i, j, s[i][j]) for i in range(len(durations)) for j in range(lot))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=3), st.integers(1, 5), st.integers(0, 10_000))
def test_every_module_covers_the_makespan(units, lot, seed):
    steps = []
    for i, u in enumerate(units):
        model = seeded_model(seed % 97 + i, coupling_dim=2 if i else 0, output_range=((0.0, 50.0), (0.0, 50.0)))
        steps.append(step(f"M{i}", u / 10, standby=(2.0, 0.01), model=model))
    r = simulate(steps, params(steps), lot)
    for m in r.modules.values():
        assert m.service_units + m.standby_cycles * r.tick_units == r.makespan_units
        assert m.service.time + m.standby.time == pytest.approx(r.makespan, abs=1e-9)
    assert r.efforts.time == r.makespan
    assert r.efforts.energy == sum(m.total.energy for m in r.modules.values())
    assert r.efforts.cost == sum(m.total.cost for m in r.modules.values())
    for i in range(1, len(steps)):
        for j in range(lot):
            assert np.array_equal(r.couplings[i][j], r.outputs[i - 1][j][:2])


@settings(max_examples=100, deadline=None)
@given(st.lists(durations_units, min_size=1, max_size=3), st.integers(1, 6))
def test_makespan_never_decreases_with_lot_size(durations, lot):
    mods = [f"M{i}" for i in range(len(durations))]
    assert schedule(durations, mods, lot + 1)[1] >= schedule(durations, mods, lot)[1]


def test_module_used_twice_keeps_a_single_state():
    steps = [step("A", 1.0), step("B", 1.0, coupling_dim=2), step("A", 1.0, coupling_dim=2)]
    r = simulate(steps, params(steps), 3)
    intervals = sorted((a, b) for i, _, a, b in r.services if i in (0, 2))
    assert all(b1 <= a2 for (_, b1), (a2, _) in zip(intervals, intervals[1:]))
    a = r.modules["A"]
    assert a.service_cycles == 6
    assert a.service_units + a.standby_cycles * r.tick_units == r.makespan_units


def test_simulation_is_deterministic():
    steps = [step("A", 1.3, model=seeded_model(1)), step("B", 0.7, model=seeded_model(2, coupling_dim=2))]
    a = simulate(steps, params(steps), 4)
    b = simulate(steps, params(steps), 4)
    assert a.efforts == b.efforts


def test_trace_export(tmp_path):
    steps = [step("A", 2.0), step("B", 3.0, coupling_dim=2)]
    r = simulate(steps, params(steps), 2, trace=True)
    write_trace(r.events, tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert set(rows[0]) == {"time", "module", "event", "cycle"}
    starts = [row for row in rows if row["module"] == "B" and row["event"] == "service_start"]
    assert [row["time"] for row in starts] == ["2.0", "5.0"]
