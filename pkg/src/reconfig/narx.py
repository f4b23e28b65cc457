"""Adaptive process models: disturbance-extended, coupled NARX networks.

A :class:`NarxModel` holds two small MLPs. The process net ``f`` maps

    [y(k-1) .. y(k-n_y) | u^(k), u~(k-1) .. u~(k-n_u) | w(k) | k/K]

to the output estimate y^(k); the disturbance net ``h`` maps
``[du~(k-1) .. du~(k-n_u) | k/K]`` to the current disturbance estimate du^(k).
The current effective actuation is ``u^(k) = u(k) + du^(k)``, lagged ones are
``u~(k-tau) = u(k-tau) + du~(k-tau)`` built from *observed* disturbances.

Input vectors are laid out lag-major: all components of lag 1, then lag 2 and
so on. Both nets normalise their inputs and outputs with constants stored in
the model.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .model import AffineMap, Criterion, CriterionProjection, ProcessModelSpec, TrainingSettings
from .plant import OperatingDataset

FORMAT_VERSION = 1


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss."""


class Mlp:
    """Fully connected net: tanh hidden layers, linear output layer."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i}: weight/bias shape mismatch {w.shape} vs {b.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[0]} != previous output {weights[i - 1].shape[1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("weights must be finite")
        self.weights = weights
        self.biases = biases

    @classmethod
    def initialise(cls, sizes: Sequence[int], rng: np.random.Generator, zero_output: bool = False) -> Mlp:
        ws, bs = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            if last and zero_output:
                ws.append(np.zeros((n_in, n_out)))
            else:
                ws.append(rng.normal(0.0, 1.0 / math.sqrt(max(n_in, 1)), size=(n_in, n_out)))
            bs.append(np.zeros(n_out))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> Mlp:
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])], [np.zeros(b) for b in sizes[1:]])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass on a batch ``x`` of shape (N, in); returns output and layer activations."""
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else np.tanh(z)
            acts.append(a)
        return a, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], d_out: np.ndarray) -> list[np.ndarray]:
        """Gradients [dW0, db0, dW1, db1, ...] for upstream gradient ``d_out`` (N, out)."""
        grads: list[np.ndarray] = []
        delta = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = acts[i]
            grads = [a_in.T @ delta, delta.sum(axis=0)] + grads
            if i:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads

    def copy(self) -> Mlp:
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> dict[str, Any]:
        return {"sizes": self.sizes, "weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> Mlp:
        sizes = raw["sizes"]
        ws = [np.asarray(w, dtype=float).reshape(a, b) for w, a, b in zip(raw["weights"], sizes[:-1], sizes[1:])]
        return cls(ws, [np.asarray(b, dtype=float).reshape(-1) for b in raw["biases"]])


@dataclass
class Scaling:
    """Affine normalisation ``(x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, n: int) -> Scaling:
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def fit(cls, x: np.ndarray) -> Scaling:
        shift = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale < 1e-8, 1.0, scale)
        return cls(shift, scale)

    def to_json(self) -> dict[str, list[float]]:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> Scaling:
        return cls(np.asarray(raw["shift"], dtype=float), np.asarray(raw["scale"], dtype=float))


@dataclass
class NarxModel:
    """Process model of one (module, configuration, operator) service."""

    spec: ProcessModelSpec
    f: Mlp
    h: Mlp
    f_in: Scaling
    f_out: Scaling
    h_in: Scaling
    h_out: Scaling
    fitted: bool = False
    disturbance_window: np.ndarray | None = None  # (n_u, m_u), most recent first
    name: str = ""

    @classmethod
    def from_spec(cls, spec: ProcessModelSpec, name: str = "") -> NarxModel:
        f_rng, h_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
        wf = f_input_width(spec)
        wh = h_input_width(spec)
        m_y, m_u = len(spec.outputs), spec.actuations
        return cls(
            spec=spec,
            f=Mlp.initialise([wf, *spec.hidden, m_y], f_rng),
            h=Mlp.initialise([wh, *spec.hidden, m_u], h_rng, zero_output=True),
            f_in=Scaling.identity(wf),
            f_out=Scaling.identity(m_y),
            h_in=Scaling.identity(wh),
            h_out=Scaling.identity(m_u),
            disturbance_window=np.zeros((spec.n_u, m_u)),
            name=name or spec.id,
        )

    @property
    def m_y(self) -> int:
        return len(self.spec.outputs)

    @property
    def m_u(self) -> int:
        return self.spec.actuations

    @property
    def n_y(self) -> int:
        return self.spec.n_y

    @property
    def n_u(self) -> int:
        return self.spec.n_u

    @property
    def coupling_dim(self) -> int:
        return self.spec.coupling_dim

    def phase(self, k: int | np.ndarray):
        return np.asarray(k, dtype=float) / self.spec.horizon

    def copy(self) -> NarxModel:
        return copy.deepcopy(self)

    # forward passes on raw (unnormalised) design rows
    def f_raw(self, x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        xn = (x - self.f_in.shift) / self.f_in.scale
        if mask is not None:
            xn = xn * mask
        return self.f(xn) * self.f_out.scale + self.f_out.shift

    def h_raw(self, x: np.ndarray) -> np.ndarray:
        return self.h((x - self.h_in.shift) / self.h_in.scale) * self.h_out.scale + self.h_out.shift

    def to_json(self) -> dict[str, Any]:
        return {
            "format": FORMAT_VERSION,
            "name": self.name,
            "spec": self.spec.to_json(),
            "fitted": self.fitted,
            "f": self.f.to_json(),
            "h": self.h.to_json(),
            "normalisation": {k: getattr(self, k).to_json() for k in ("f_in", "f_out", "h_in", "h_out")},
            "disturbance_window": None if self.disturbance_window is None else self.disturbance_window.tolist(),
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> NarxModel:
        from .model import validate_process_model_spec

        if raw.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model file format {raw.get('format')!r}")
        spec = validate_process_model_spec(raw["spec"])
        model = cls(
            spec=spec,
            f=Mlp.from_json(raw["f"]),
            h=Mlp.from_json(raw["h"]),
            fitted=bool(raw["fitted"]),
            disturbance_window=None if raw["disturbance_window"] is None else np.asarray(raw["disturbance_window"], dtype=float).reshape(spec.n_u, spec.actuations),
            name=raw.get("name", spec.id),
            **{k: Scaling.from_json(raw["normalisation"][k]) for k in ("f_in", "f_out", "h_in", "h_out")},
        )
        if model.f.sizes != [f_input_width(spec), *spec.hidden, len(spec.outputs)]:
            raise ValueError("process net shape does not match its declaration")
        if model.h.sizes != [h_input_width(spec), *spec.hidden, spec.actuations]:
            raise ValueError("disturbance net shape does not match its declaration")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> NarxModel:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def f_input_width(spec: ProcessModelSpec) -> int:
    m_y, m_u = len(spec.outputs), spec.actuations
    return m_y * spec.n_y + m_u * (spec.n_u + 1) + spec.coupling_dim + 1


def h_input_width(spec: ProcessModelSpec) -> int:
    return spec.actuations * spec.n_u + 1


# --- histories and the prediction chain ------------------------------------


@dataclass(frozen=True)
class ProcessHistory:
    """Lag windows of one module, most recent first, zero-padded before start-up.

    ``outputs`` is y(k-1..k-n_y), ``actuations`` the commanded u(k-1..k-n_u),
    ``disturbances`` the observed du~(k-1..k-n_u); ``coupling`` is w(k).
    """

    outputs: np.ndarray
    actuations: np.ndarray
    disturbances: np.ndarray
    coupling: np.ndarray

    @classmethod
    def start(cls, model: NarxModel, disturbances: np.ndarray | None = None) -> ProcessHistory:
        d = np.zeros((model.n_u, model.m_u)) if disturbances is None else np.asarray(disturbances, dtype=float)
        return cls(np.zeros((model.n_y, model.m_y)), np.zeros((model.n_u, model.m_u)), d.copy(), np.zeros(model.coupling_dim))

    def advance(self, y, u, du, coupling=None) -> ProcessHistory:
        """History for the next cycle after observing y(k), u(k), du~(k)."""

        def push(window: np.ndarray, row) -> np.ndarray:
            return np.vstack([np.asarray(row, dtype=float)[None, :], window[:-1]])

        w = self.coupling if coupling is None else np.asarray(coupling, dtype=float)
        return ProcessHistory(push(self.outputs, y), push(self.actuations, u), push(self.disturbances, du), w)


def _check_history(model: NarxModel, history: ProcessHistory) -> None:
    expected = {
        "outputs": (model.n_y, model.m_y),
        "actuations": (model.n_u, model.m_u),
        "disturbances": (model.n_u, model.m_u),
        "coupling": (model.coupling_dim,),
    }
    for name, shape in expected.items():
        if getattr(history, name).shape != shape:
            raise ValueError(f"history {name} has shape {getattr(history, name).shape}, model expects {shape}")


def h_row(model: NarxModel, disturbances: np.ndarray, k) -> np.ndarray:
    return np.concatenate([np.asarray(disturbances, dtype=float).ravel(), [model.phase(k)]])


def f_row(model: NarxModel, outputs: np.ndarray, actuation: np.ndarray, coupling: np.ndarray, k) -> np.ndarray:
    return np.concatenate([outputs.ravel(), actuation.ravel(), np.asarray(coupling, dtype=float).ravel(), [model.phase(k)]])


def estimate_disturbance(model: NarxModel, history: ProcessHistory, k: int) -> np.ndarray:
    """Current disturbance estimate du^(k) from the observed window du~(k-1..k-n_u)."""
    _check_history(model, history)
    return model.h_raw(h_row(model, history.disturbances, k)[None, :])[0]


def effective_actuation(history: ProcessHistory, u_now, du_hat) -> tuple[np.ndarray, np.ndarray]:
    """Return (u^(k), u~(k-1..k-n_u)).

    The current actuation carries the *estimated* disturbance, the lagged ones
    the *observed* disturbances.
    """
    u_now = np.asarray(u_now, dtype=float)
    du_hat = np.asarray(du_hat, dtype=float)
    if u_now.shape != du_hat.shape:
        raise ValueError("actuation and disturbance estimate differ in shape")
    return u_now + du_hat, history.actuations + history.disturbances


def actuation_matrix(history: ProcessHistory, u_now, du_hat) -> np.ndarray:
    current, lagged = effective_actuation(history, u_now, du_hat)
    return np.vstack([current[None, :], lagged])


def predict(model: NarxModel, history: ProcessHistory, u_now, k: int) -> np.ndarray:
    """One-step output estimate y^(k) of the coupled, disturbance-aware model."""
    u_now = np.asarray(u_now, dtype=float)
    if u_now.shape != (model.m_u,):
        raise ValueError(f"actuation has shape {u_now.shape}, model expects ({model.m_u},)")
    du_hat = estimate_disturbance(model, history, k)
    row = f_row(model, history.outputs, actuation_matrix(history, u_now, du_hat), history.coupling, k)
    return model.f_raw(row[None, :])[0]


@dataclass(frozen=True)
class CriterionView:
    """The part of a process model relevant for one criterion.

    Dropped history entries are masked to their normalisation centre, so they
    cannot influence the retained outputs.
    """

    model: NarxModel
    criterion: Criterion
    mask: np.ndarray
    outputs: tuple[int, ...]

    def predict(self, history: ProcessHistory, u_now, k: int) -> np.ndarray:
        du_hat = estimate_disturbance(self.model, history, k)
        row = f_row(self.model, history.outputs, actuation_matrix(history, u_now, du_hat), history.coupling, k)
        return self.from_row(row)

    def from_row(self, row: np.ndarray) -> np.ndarray:
        return self.model.f_raw(row[None, :], self.mask)[0][list(self.outputs)]


def criterion_mask(model: NarxModel, projection: CriterionProjection) -> np.ndarray:
    m_y, m_u, n_y, n_u = model.m_y, model.m_u, model.n_y, model.n_u
    mask = np.ones(f_input_width(model.spec))
    dropped_out = {model.spec.outputs.index(o) for o in projection.exclude_outputs}
    for j in range(1, n_y + 1):
        for i in range(m_y):
            if i in dropped_out or j in projection.exclude_output_lags:
                mask[(j - 1) * m_y + i] = 0.0
    base = m_y * n_y
    for tau in range(n_u + 1):
        for c in range(m_u):
            if c in projection.exclude_actuations or tau in projection.exclude_actuation_lags:
                mask[base + tau * m_u + c] = 0.0
    base += m_u * (n_u + 1)
    for c in projection.exclude_coupling:
        mask[base + c] = 0.0
    return mask


def project_criterion(model: NarxModel, z: Criterion | str, weight: float = 1.0) -> CriterionView:
    """Criterion-restricted predictor; identity view when nothing is excluded."""
    z = Criterion(z)
    projection = model.spec.criteria.get(z, CriterionProjection())
    dropped = set(projection.exclude_outputs)
    outputs = tuple(i for i, name in enumerate(model.spec.outputs) if name not in dropped)
    if not outputs and weight > 0:
        raise ValueError(f"model {model.name!r} retains no outputs for weighted criterion {z.value!r}")
    return CriterionView(model, z, criterion_mask(model, projection), outputs)


def criterion_mapping(model: NarxModel, z: Criterion | str) -> AffineMap:
    z = Criterion(z)
    projection = model.spec.criteria.get(z)
    if projection is None or projection.mapping is None:
        raise KeyError(f"model {model.name!r} declares no mapping for criterion {z.value!r}")
    return projection.mapping


def service_effort(model: NarxModel, trajectory: Sequence[Sequence[float]], z: Criterion | str) -> float:
    """Sum of the criterion mapping over the per-cycle criterion outputs (empty trajectory gives 0)."""
    g = criterion_mapping(model, z)
    total = 0.0
    for y in trajectory:
        total += g(y)
    return total


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    """Teacher-forced design rows (raw units) and targets."""

    f_inputs: np.ndarray
    f_targets: np.ndarray
    h_inputs: np.ndarray
    h_targets: np.ndarray

    def __len__(self) -> int:
        return len(self.f_inputs)

    def take(self, idx) -> Batch:
        return Batch(self.f_inputs[idx], self.f_targets[idx], self.h_inputs[idx], self.h_targets[idx])


def _lagged(block: np.ndarray, lags: range) -> np.ndarray:
    """Stack ``block`` shifted by each lag (zero-padded); result (N, len(lags), width)."""
    n, width = block.shape
    out = np.zeros((n, len(lags), width))
    for col, lag in enumerate(lags):
        if lag < n:
            out[lag:, col, :] = block[: n - lag]
    return out


def build_batch(model: NarxModel, data: OperatingDataset) -> Batch:
    """Design rows for every record, using true lagged outputs and observed disturbances."""
    if data.u.shape[1] != model.m_u or data.y.shape[1] != model.m_y or data.w.shape[1] != model.coupling_dim:
        raise ValueError(
            f"dataset dimensions (m_u={data.u.shape[1]}, m_y={data.y.shape[1]}, w={data.w.shape[1]}) "
            f"do not match model {model.name!r} (m_u={model.m_u}, m_y={model.m_y}, w={model.coupling_dim})"
        )
    n = len(data)
    phase = model.phase(data.k)[:, None]
    y_lags = _lagged(data.y, range(1, model.n_y + 1)).reshape(n, -1)
    u_eff = data.u + data.du
    u_lags = _lagged(u_eff, range(0, model.n_u + 1)).reshape(n, -1)
    d_lags = _lagged(data.du, range(1, model.n_u + 1)).reshape(n, -1)
    f_in = np.hstack([y_lags, u_lags, data.w, phase])
    h_in = np.hstack([d_lags, phase])
    return Batch(f_in, data.y.copy(), h_in, data.du.copy())


@dataclass
class Gradients:
    """Loss gradients per net, ordered [dW0, db0, dW1, db1, ...]."""

    f: list[np.ndarray]
    h: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return self.f + self.h


def loss(model: NarxModel, batch: Batch) -> float:
    """Mean squared one-step error of the process net plus that of the disturbance net."""
    ef = model.f_raw(batch.f_inputs) - batch.f_targets
    eh = model.h_raw(batch.h_inputs) - batch.h_targets
    return float(np.mean(ef**2) + np.mean(eh**2))


def gradient_of_loss(model: NarxModel, batch: Batch) -> Gradients:
    """Analytic gradient of :func:`loss` with respect to every weight and bias."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    grads = []
    for net, x_in, out_s, target in (
        (model.f, (batch.f_inputs - model.f_in.shift) / model.f_in.scale, model.f_out, batch.f_targets),
        (model.h, (batch.h_inputs - model.h_in.shift) / model.h_in.scale, model.h_out, batch.h_targets),
    ):
        out, acts = net.forward(x_in)
        err = out * out_s.scale + out_s.shift - target
        d_out = 2.0 * err * out_s.scale / err.size
        grads.append(net.backward(acts, d_out))
    return Gradients(*grads)


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainingReport:
    losses: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def initial(self) -> float:
        return self.losses[0]

    @property
    def final(self) -> float:
        return self.losses[self.best_epoch]


def train(model: NarxModel, data: OperatingDataset, settings: TrainingSettings | None = None, seed: int = 0) -> tuple[NarxModel, TrainingReport]:
    """Fit ``f`` and ``h`` to operating data with minibatch Adam.

    Works on a copy; the input model is untouched. Returns the parameters with
    the lowest full-batch training loss seen (epoch 0 included), so the final
    loss never exceeds the initial one. Normalisation constants are fitted on
    the first non-trivial training run and then kept fixed.
    """
    settings = settings or model.spec.training
    trained = model.copy()
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if settings.epochs == 0:
        return trained, TrainingReport([loss(trained, build_batch(trained, data))])
    if not trained.fitted:
        raw = build_batch(trained, data)
        trained.f_in = Scaling.fit(raw.f_inputs)
        trained.f_out = Scaling.fit(raw.f_targets)
        trained.h_in = Scaling.fit(raw.h_inputs)
        trained.h_out = Scaling.fit(raw.h_targets)
        trained.fitted = True
    batch = build_batch(trained, data)
    params = trained.f.params() + trained.h.params()
    opt = _Adam(params, settings.learning_rate)
    rng = np.random.default_rng(seed)
    report = TrainingReport([loss(trained, batch)])
    best = [p.copy() for p in params]
    n = len(batch)
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(n)
        # overflow shows up as a non-finite loss below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, settings.batch_size):
                g = gradient_of_loss(trained, batch.take(order[start : start + settings.batch_size]))
                opt.step(g.arrays())
            current = loss(trained, batch)
        if not math.isfinite(current):
            raise TrainingDivergence(
                f"model {trained.name!r}: non-finite training loss at epoch {epoch} "
                f"(learning rate {settings.learning_rate}); last finite loss {report.losses[-1]:.6g}"
            )
        report.losses.append(current)
        if current < report.losses[report.best_epoch]:
            report.best_epoch = epoch
            best = [p.copy() for p in params]
    for p, b in zip(params, best):
        p[...] = b
    trained.disturbance_window = data.du[::-1][: trained.n_u].copy()
    if len(trained.disturbance_window) < trained.n_u:
        pad = np.zeros((trained.n_u - len(trained.disturbance_window), trained.m_u))
        trained.disturbance_window = np.vstack([trained.disturbance_window, pad])
    return trained, report


def one_step_mse(model: NarxModel, data: OperatingDataset, start: int = 0) -> float:
    """Held-out one-step-ahead MSE of :func:`predict` over records ``start:``.

    Uses true lagged outputs and observed disturbances; the current disturbance
    is the model's own estimate.
    """
    hist = ProcessHistory.start(model)
    errs = []
    for i in range(len(data)):
        hist = ProcessHistory(hist.outputs, hist.actuations, hist.disturbances, data.w[i].astype(float))
        if i >= start:
            y_hat = predict(model, hist, data.u[i], int(data.k[i]))
            errs.append(np.mean((y_hat - data.y[i]) ** 2))
        hist = hist.advance(data.y[i], data.u[i], data.du[i])
    return float(np.mean(errs))
