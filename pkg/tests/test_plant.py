import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reconfig.plant import Disturbance, Excitation, OperatingDataset, PlantSpec, PlantState, generate_dataset, parse_plant_spec, step_plant


def first_order(**kw):
    return PlantSpec(bias=np.zeros(1), output_lags=np.array([[[0.5]]]), actuation_lags=np.array([[[1.0]]]), **kw)


def test_no_disturbance_profile_is_zero():
    d = Disturbance()
    assert all(d.value(k) == 0.0 for k in range(1, 50))


def test_step_profile():
    d = Disturbance("step", 0.3, onset=5)
    assert [d.value(k) for k in range(1, 8)] == [0.0, 0.0, 0.0, 0.0, 0.3, 0.3, 0.3]


def test_drift_and_periodic_profiles():
    drift = Disturbance("drift", 0.1, onset=3)
    assert [drift.value(k) for k in (2, 3, 4)] == [0.0, 0.1, pytest.approx(0.2)]
    per = Disturbance("periodic", 1.0, onset=1, period=4)
    assert per.value(2) == pytest.approx(1.0) and per.value(1) == 0.0


def test_disturbance_on_selected_channels_only():
    d = Disturbance("step", 0.3, onset=1, channels=(1,))
    assert d.vector(2, 3).tolist() == [0.0, 0.3, 0.0]


def test_first_order_recursion():
    spec = first_order()
    state = PlantState.initial(spec)
    ys = []
    for k in range(1, 5):
        y, du, state = step_plant(spec, state, [1.0], np.zeros(0), k)
        ys.append(y[0])
        assert du.tolist() == [0.0]
    assert ys == [1.0, 1.5, 1.75, 1.875]


def test_disturbance_acts_on_the_actuation():
    spec = first_order(disturbance=Disturbance("step", 0.3, onset=2))
    state = PlantState.initial(spec)
    y1, _, state = step_plant(spec, state, [1.0], np.zeros(0), 1)
    y2, du2, _ = step_plant(spec, state, [1.0], np.zeros(0), 2)
    assert y1[0] == 1.0 and du2[0] == 0.3
    assert y2[0] == pytest.approx(0.5 * 1.0 + 1.3)


def test_zero_cycles_rejected():
    with pytest.raises(ValueError):
        generate_dataset(first_order(), Excitation((0.0,), (1.0,)), 0, seed=0)


def test_same_seed_same_dataset():
    spec = first_order(noise_std=0.1, seed=3)
    a = generate_dataset(spec, Excitation((0.0,), (1.0,), hold=3), 30, seed=5)
    b = generate_dataset(spec, Excitation((0.0,), (1.0,), hold=3), 30, seed=5)
    for name in ("k", "u", "du", "w", "y"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def replay(spec, data):
    """Re-run the declared dynamics on the recorded u, du and w with explicit loops."""
    n_a, n_b = spec.output_lags.shape[0], spec.actuation_lags.shape[0]
    ys, ue = [], []
    for i in range(len(data)):
        u = data.u[i] + data.du[i]
        y = spec.bias.copy()
        for j in range(1, n_a + 1):
            if i - j >= 0:
                y = y + spec.output_lags[j - 1] @ ys[i - j]
        y = y + spec.actuation_lags[0] @ u
        for t in range(1, n_b):
            if i - t >= 0:
                y = y + spec.actuation_lags[t] @ ue[i - t]
        if spec.coupling is not None:
            y = y + spec.coupling @ data.w[i]
        if spec.quadratic is not None:
            y = y + spec.quadratic @ (u * u)
        ys.append(y)
        ue.append(u)
    return np.array(ys)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["none", "step", "drift", "periodic"]))
def test_dataset_replays_through_the_true_dynamics(seed, kind):
    rng = np.random.default_rng(seed)
    spec = PlantSpec(
        bias=rng.normal(size=2),
        output_lags=rng.uniform(-0.3, 0.3, size=(2, 2, 2)),
        actuation_lags=rng.normal(size=(2, 2, 1)),
        coupling=rng.normal(size=(2, 1)),
        quadratic=rng.normal(size=(2, 1)),
        disturbance=Disturbance(kind, 0.2, onset=3, period=7),
    )
    data = generate_dataset(spec, Excitation((0.0,), (1.0,)), 25, seed=seed)
    assert np.allclose(replay(spec, data), data.y, rtol=1e-12, atol=1e-12)
    assert np.array_equal(data.du[:, 0], [spec.disturbance.value(k) for k in data.k])


def test_csv_round_trip(tmp_path):
    spec = PlantSpec(bias=np.zeros(2), output_lags=np.zeros((1, 2, 2)), actuation_lags=np.ones((1, 2, 1)), coupling=np.ones((2, 2)), noise_std=0.05, seed=1)
    data = generate_dataset(spec, Excitation((0.0,), (1.0,)), 12, seed=2)
    data.to_csv(tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "k,u_0,du_0,w_0,w_1,y_0,y_1"
    back = OperatingDataset.from_csv(tmp_path / "d.csv")
    for name in ("k", "u", "du", "w", "y"):
        assert np.array_equal(getattr(back, name), getattr(data, name))


def test_csv_with_bad_header_rejected(tmp_path):
    (tmp_path / "d.csv").write_text("k,u_0,foo_0\n1,0,0\n")
    with pytest.raises(ValueError, match="unexpected column"):
        OperatingDataset.from_csv(tmp_path / "d.csv")


def test_plant_declaration_shape_checks():
    with pytest.raises(ValueError):
        parse_plant_spec({"actuation_lags": [[[1.0, 2.0]]]}, m_y=2, m_u=1)
    with pytest.raises(ValueError, match="coupling"):
        parse_plant_spec({"actuation_lags": [[[1.0]]], "coupling": [[1.0]]}, m_y=1, m_u=1)
    spec = parse_plant_spec({"actuation_lags": [[[1.0]]], "disturbance": {"kind": "step", "magnitude": 0.3, "onset": 5}}, m_y=1, m_u=1)
    assert spec.disturbance == Disturbance("step", 0.3, 5)
