import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import model_spec, seeded_model
from oracles import finite_difference, max_relative_error, random_batch
from reconfig.model import AffineMap, Criterion, CriterionProjection, TrainingSettings
from reconfig.narx import (
    Batch,
    Mlp,
    NarxModel,
    ProcessHistory,
    TrainingDivergence,
    build_batch,
    effective_actuation,
    estimate_disturbance,
    gradient_of_loss,
    one_step_mse,
    predict,
    project_criterion,
    service_effort,
    train,
)
from reconfig.plant import Excitation, OperatingDataset, PlantSpec, generate_dataset


def loop_mlp(net: Mlp, x):
    """Forward pass with explicit loops, independent of the vectorised implementation."""
    a = [float(v) for v in x]
    for li, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += a[i] * float(w[i, j])
            out.append(s if li == len(net.weights) - 1 else math.tanh(s))
        a = out
    return a


def random_history(model, rng):
    return ProcessHistory(
        rng.normal(size=(model.n_y, model.m_y)),
        rng.normal(size=(model.n_u, model.m_u)),
        rng.normal(size=(model.n_u, model.m_u)),
        rng.normal(size=model.coupling_dim),
    )


def oracle_predict(model, hist, u, k):
    """y^(k) rebuilt from scratch: normalise, loop-forward, denormalise."""
    h_x = list(hist.disturbances.ravel()) + [k / model.spec.horizon]
    h_n = [(v - s) / c for v, s, c in zip(h_x, model.h_in.shift, model.h_in.scale)]
    du = [o * c + s for o, s, c in zip(loop_mlp(model.h, h_n), model.h_out.shift, model.h_out.scale)]
    current = [ui + di for ui, di in zip(u, du)]
    lagged = (hist.actuations + hist.disturbances).ravel().tolist()
    f_x = list(hist.outputs.ravel()) + current + lagged + list(hist.coupling) + [k / model.spec.horizon]
    f_n = [(v - s) / c for v, s, c in zip(f_x, model.f_in.shift, model.f_in.scale)]
    return np.array([o * c + s for o, s, c in zip(loop_mlp(model.f, f_n), model.f_out.shift, model.f_out.scale)]), np.array(du)


# --- disturbance estimate and effective actuation ---------------------------


def test_zero_disturbance_net_gives_zero_estimate():
    m = seeded_model(n_u=2)
    m.h = Mlp.zeros(m.h.sizes)
    m.h_out.shift[...] = 0.0
    hist = random_history(m, np.random.default_rng(0))
    assert np.array_equal(estimate_disturbance(m, hist, 3), np.zeros(m.m_u))


def test_zero_window_gives_output_bias():
    m = NarxModel.from_spec(model_spec(m_u=2, n_u=2))
    m.h.biases[-1][...] = [0.25, -0.1]
    hist = ProcessHistory.start(m)
    assert np.allclose(estimate_disturbance(m, hist, 0), [0.25, -0.1], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_disturbance_estimate_matches_loop_oracle(seed):
    m = seeded_model(seed, m_u=2, n_u=3)
    hist = random_history(m, np.random.default_rng(seed))
    _, du = oracle_predict(m, hist, [0.0, 0.0], 7)
    assert np.allclose(estimate_disturbance(m, hist, 7), du, rtol=0, atol=1e-12)


def test_effective_actuation_examples():
    m = NarxModel.from_spec(model_spec(m_u=1, n_u=1))
    hist = ProcessHistory.start(m)
    cur, lag = effective_actuation(hist, [1.0], [0.0])
    assert cur.tolist() == [1.0] and lag.tolist() == [[0.0]]
    cur, _ = effective_actuation(hist, [1.0], [0.25])
    assert cur.tolist() == [1.25]
    hist = hist.advance([0.0, 0.0], [2.0], [-0.5])
    _, lag = effective_actuation(hist, [0.0], [0.0])
    assert lag.tolist() == [[1.5]]


# --- prediction ----------------------------------------------------------------


def test_zero_process_net_returns_output_bias():
    m = seeded_model()
    m.f = Mlp.zeros(m.f.sizes)
    m.f.biases[-1][...] = [0.5, -1.0]
    for u in ([0.0], [3.0]):
        y = predict(m, random_history(m, np.random.default_rng(1)), u, 4)
        assert np.allclose(y, np.array([0.5, -1.0]) * m.f_out.scale + m.f_out.shift, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_prediction_matches_loop_oracle(seed):
    m = seeded_model(seed, m_y=2, m_u=2, n_y=2, n_u=2, coupling_dim=2)
    hist = random_history(m, np.random.default_rng(seed + 7))
    u = [0.3, -0.2]
    y, _ = oracle_predict(m, hist, u, 11)
    assert np.allclose(predict(m, hist, u, 11), y, rtol=0, atol=1e-12)


def test_coupling_changes_prediction_only_through_weights():
    m = seeded_model(3, coupling_dim=2)
    hist = random_history(m, np.random.default_rng(2))
    other = ProcessHistory(hist.outputs, hist.actuations, hist.disturbances, hist.coupling + 1.0)
    assert not np.allclose(predict(m, hist, [0.1], 2), predict(m, other, [0.1], 2))
    c0 = m.f.weights[0].shape[0] - 3  # coupling rows sit just before the phase row
    m.f.weights[0][c0 : c0 + 2, :] = 0.0
    assert np.array_equal(predict(m, hist, [0.1], 2), predict(m, other, [0.1], 2))


def test_without_disturbances_prediction_ignores_disturbance_channel():
    m = seeded_model(4)
    m.h = Mlp.zeros(m.h.sizes)
    m.h_out.shift[...] = 0.0
    hist = ProcessHistory.start(m)
    y1 = predict(m, hist, [0.4], 1)
    y2 = predict(m, ProcessHistory(hist.outputs, hist.actuations, hist.disturbances * 0.0, hist.coupling), [0.4], 1)
    assert np.array_equal(y1, y2)


# --- criterion projection ---------------------------------------------------------


def test_empty_exclusion_is_identity_view():
    crit = {z: CriterionProjection(mapping=AffineMap((1.0, 1.0))) for z in (Criterion.ENERGY, Criterion.COST)}
    m = seeded_model(5, crit=crit)
    view = project_criterion(m, Criterion.ENERGY)
    hist = random_history(m, np.random.default_rng(5))
    assert view.outputs == (0, 1)
    assert np.array_equal(view.predict(hist, [0.2], 3), predict(m, hist, [0.2], 3))


def test_dropping_second_output():
    m = seeded_model(6)  # energy keeps y0 only
    view = project_criterion(m, Criterion.ENERGY)
    hist = random_history(m, np.random.default_rng(6))
    assert view.predict(hist, [0.2], 3).shape == (1,)
    bumped = ProcessHistory(hist.outputs + np.array([0.0, 5.0]), hist.actuations, hist.disturbances, hist.coupling)
    assert np.array_equal(view.predict(hist, [0.2], 3), view.predict(bumped, [0.2], 3))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3).filter(lambda d: abs(d) > 1e-3))
def test_perturbing_dropped_inputs_never_changes_projected_output(seed, delta):
    proj = CriterionProjection(exclude_outputs=("y1",), exclude_output_lags=(2,), exclude_actuation_lags=(1,), exclude_coupling=(0,), mapping=AffineMap((1.0,)))
    crit = {Criterion.ENERGY: proj, Criterion.COST: proj}
    m = seeded_model(seed % 50, n_y=2, n_u=1, coupling_dim=2, crit=crit)
    view = project_criterion(m, Criterion.ENERGY)
    rng = np.random.default_rng(seed)
    hist = random_history(m, rng)
    base = view.predict(hist, [0.3], 5)
    dropped = [
        ProcessHistory(hist.outputs + np.array([[0, delta], [0, 0]]), hist.actuations, hist.disturbances, hist.coupling),  # y1 lag 1
        ProcessHistory(hist.outputs + np.array([[0, 0], [delta, 0]]), hist.actuations, hist.disturbances, hist.coupling),  # y0 lag 2
        ProcessHistory(hist.outputs, hist.actuations + delta, hist.disturbances, hist.coupling),  # u lag 1
        ProcessHistory(hist.outputs, hist.actuations, hist.disturbances, hist.coupling + np.array([delta, 0])),  # coupling 0
    ]
    for h in dropped:
        assert np.array_equal(view.predict(h, [0.3], 5), base)
    kept = ProcessHistory(hist.outputs + np.array([[delta, 0], [0, 0]]), hist.actuations, hist.disturbances, hist.coupling)
    assert not np.array_equal(view.predict(kept, [0.3], 5), base)


def test_weighted_criterion_needs_retained_outputs():
    proj = CriterionProjection(exclude_outputs=("y0", "y1"))
    m = seeded_model(crit={Criterion.ENERGY: proj, Criterion.COST: proj})
    with pytest.raises(ValueError):
        project_criterion(m, Criterion.ENERGY)
    assert project_criterion(m, Criterion.ENERGY, weight=0.0).outputs == ()


@pytest.mark.parametrize(
    "mapping, trajectory, expected",
    [
        (AffineMap((1.0,), 0.0), [[2.0], [2.0], [2.0]], 6.0),
        (AffineMap((1.0,), 0.0), [], 0.0),
        (AffineMap((1.5,), 0.5), [[2.0], [4.0]], 10.0),
    ],
)
def test_service_effort_examples(mapping, trajectory, expected):
    proj = CriterionProjection(exclude_outputs=("y1",), mapping=mapping)
    m = seeded_model(crit={Criterion.ENERGY: proj, Criterion.COST: proj})
    assert service_effort(m, trajectory, Criterion.ENERGY) == expected


# --- gradients -------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    m = seeded_model(seed, m_u=2, n_y=2, n_u=2, coupling_dim=1, hidden=(4, 3))
    batch = random_batch(m, np.random.default_rng(seed))
    assert max_relative_error(gradient_of_loss(m, batch).arrays(), finite_difference(m, batch)) < 1e-4


def test_zero_residual_gives_zero_gradient():
    m = seeded_model(2)
    rng = np.random.default_rng(0)
    b = random_batch(m, rng)
    b = Batch(b.f_inputs, m.f_raw(b.f_inputs), b.h_inputs, m.h_raw(b.h_inputs))
    assert all(np.allclose(g, 0.0, atol=1e-14) for g in gradient_of_loss(m, b).arrays())


def test_duplicated_batch_has_same_mean_gradient():
    m = seeded_model(3)
    b = random_batch(m, np.random.default_rng(3))
    doubled = b.take(np.r_[np.arange(len(b)), np.arange(len(b))])
    for g1, g2 in zip(gradient_of_loss(m, b).arrays(), gradient_of_loss(m, doubled).arrays()):
        assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)


# --- training ------------------------------------------------------------------


def linear_plant(noise=0.0, seed=0):
    return PlantSpec(
        bias=np.array([0.1]),
        output_lags=np.array([[[0.5]]]),
        actuation_lags=np.array([[[0.8]], [[0.2]]]),
        noise_std=noise,
        seed=seed,
    )


def test_linear_ground_truth_is_learned():
    spec = model_spec(m_y=1, m_u=1, n_y=1, n_u=1, hidden=(), horizon=400, crit={})
    plant = linear_plant()
    data = generate_dataset(plant, Excitation((0.0,), (1.0,)), 400, seed=1)
    trained, report = train(NarxModel.from_spec(spec), data.slice(0, 300), TrainingSettings(0.01, 300, 32), seed=0)
    assert report.final <= report.initial
    assert one_step_mse(trained, data, start=300) < 1e-3


def test_zero_epochs_leaves_model_unchanged():
    m = seeded_model(1, m_y=1, crit={})
    data = generate_dataset(linear_plant(), Excitation((0.0,), (1.0,)), 20, seed=2)
    trained, _ = train(m, data, TrainingSettings(0.01, 0, 8))
    assert all(np.array_equal(a, b) for a, b in zip(trained.f.params() + trained.h.params(), m.f.params() + m.h.params()))


def test_training_is_bit_reproducible_and_does_not_touch_input():
    m = NarxModel.from_spec(model_spec(m_y=1, crit={}, hidden=(6,)))
    before = [p.copy() for p in m.f.params()]
    data = generate_dataset(linear_plant(0.01), Excitation((0.0,), (1.0,)), 60, seed=3)
    a, ra = train(m, data, TrainingSettings(0.01, 15, 8), seed=9)
    b, rb = train(m, data, TrainingSettings(0.01, 15, 8), seed=9)
    assert ra.losses == rb.losses
    assert all(np.array_equal(x, y) for x, y in zip(a.f.params() + a.h.params(), b.f.params() + b.h.params()))
    assert all(np.array_equal(x, y) for x, y in zip(before, m.f.params()))


def test_divergence_is_reported():
    m = NarxModel.from_spec(model_spec(m_y=1, crit={}, hidden=(6,)))
    data = generate_dataset(linear_plant(), Excitation((0.0,), (1.0,)), 40, seed=4)
    with pytest.raises(TrainingDivergence, match="non-finite"):
        train(m, data, TrainingSettings(1e200, 3, 8))


def test_empty_dataset_rejected():
    m = NarxModel.from_spec(model_spec(m_y=1, crit={}))
    empty = OperatingDataset(np.zeros(0, int), np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 0)), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        train(m, empty)


def test_batch_rows_use_true_lags():
    m = NarxModel.from_spec(model_spec(m_y=1, n_y=2, n_u=1, crit={}))
    data = generate_dataset(linear_plant(), Excitation((0.0,), (1.0,)), 5, seed=5)
    b = build_batch(m, data)
    assert b.f_inputs[3, :2].tolist() == [data.y[2, 0], data.y[1, 0]]
    assert b.f_inputs[0, :2].tolist() == [0.0, 0.0]
    assert b.f_inputs[3, 2:4].tolist() == [data.u[3, 0], data.u[2, 0]]


def test_model_file_round_trip(tmp_path):
    m = seeded_model(8, coupling_dim=1)
    m.fitted = True
    m.save(tmp_path / "m.json")
    back = NarxModel.load(tmp_path / "m.json")
    hist = random_history(m, np.random.default_rng(0))
    assert np.array_equal(predict(back, hist, [0.5], 4), predict(m, hist, [0.5], 4))
    assert back.spec == m.spec
