"""Synthetic ground-truth process plants with anomaly injection.

A plant is a closed-form polynomial NARX system. Disturbances act additively
on the actuation channels; the plant reports the realised disturbance next
to every output, which is what an anomaly detector would have observed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

DISTURBANCE_KINDS = ("none", "step", "drift", "periodic")


@dataclass(frozen=True)
class Disturbance:
    kind: str = "none"
    magnitude: float = 0.0
    onset: int = 1
    period: int = 20
    channels: tuple[int, ...] | None = None  # None: all channels

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.onset < 1:
            raise ValueError("disturbance onset cycle must be >= 1")
        if self.period < 1:
            raise ValueError("disturbance period must be >= 1")

    def value(self, k: int) -> float:
        """Scalar disturbance level at cycle ``k``."""
        if self.kind == "none" or k < self.onset:
            return 0.0
        if self.kind == "step":
            return self.magnitude
        if self.kind == "drift":
            return self.magnitude * (k - self.onset + 1)
        return self.magnitude * math.sin(2.0 * math.pi * (k - self.onset) / self.period)

    def vector(self, k: int, m_u: int) -> np.ndarray:
        out = np.zeros(m_u)
        level = self.value(k)
        if level:
            chans = range(m_u) if self.channels is None else self.channels
            for c in chans:
                out[c] = level
        return out

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "magnitude": self.magnitude, "onset": self.onset, "period": self.period}
        if self.channels is not None:
            out["channels"] = list(self.channels)
        return out


@dataclass(frozen=True)
class PlantSpec:
    """True dynamics of one process.

    y(k) = bias + sum_j A_j y(k-j) + sum_tau B_tau u~(k-tau) + C w(k) + Q u~(k)**2 + noise
    with u~ = u + du (commanded plus realised disturbance), j = 1..len(A),
    tau = 0..len(B)-1.
    """

    bias: np.ndarray
    output_lags: np.ndarray  # (n_a, m_y, m_y)
    actuation_lags: np.ndarray  # (n_b, m_y, m_u), index 0 is the current actuation
    coupling: np.ndarray | None = None  # (m_y, c)
    quadratic: np.ndarray | None = None  # (m_y, m_u)
    noise_std: float = 0.0
    disturbance: Disturbance = field(default_factory=Disturbance)
    coupling_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise std must be >= 0")

    @property
    def m_y(self) -> int:
        return self.bias.shape[0]

    @property
    def m_u(self) -> int:
        return self.actuation_lags.shape[2]

    @property
    def coupling_dim(self) -> int:
        return 0 if self.coupling is None else self.coupling.shape[1]

    def with_disturbance(self, disturbance: Disturbance) -> PlantSpec:
        return replace(self, disturbance=disturbance)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "bias": self.bias.tolist(),
            "output_lags": self.output_lags.tolist(),
            "actuation_lags": self.actuation_lags.tolist(),
            "noise_std": self.noise_std,
            "disturbance": self.disturbance.to_json(),
            "coupling_range": list(self.coupling_range),
            "seed": self.seed,
        }
        if self.coupling is not None:
            out["coupling"] = self.coupling.tolist()
        if self.quadratic is not None:
            out["quadratic"] = self.quadratic.tolist()
        return out

    def __eq__(self, other):
        if not isinstance(other, PlantSpec):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None


def parse_plant_spec(raw: Mapping[str, Any], *, m_y: int, m_u: int, coupling_dim: int = 0, strict: bool = True) -> PlantSpec:
    """Build a :class:`PlantSpec` from its JSON form, checking shapes against the model."""
    if not isinstance(raw, Mapping):
        raise ValueError("expected an object")
    known = {"bias", "output_lags", "actuation_lags", "coupling", "quadratic", "noise_std", "disturbance", "coupling_range", "seed"}
    unknown = set(raw) - known
    if unknown and strict:
        raise ValueError(f"unknown keys {sorted(unknown)}")
    try:
        bias = np.asarray(raw.get("bias", [0.0] * m_y), dtype=float)
        a = np.asarray(raw.get("output_lags", []), dtype=float)
        if a.size == 0:
            a = a.reshape(0, m_y, m_y)
        b = np.asarray(raw["actuation_lags"], dtype=float)
        c = None
        if coupling_dim:
            c = np.asarray(raw.get("coupling", np.zeros((m_y, coupling_dim))), dtype=float)
        elif "coupling" in raw:
            raise ValueError("coupling matrix given but the model has no coupling input")
        q = np.asarray(raw["quadratic"], dtype=float) if "quadratic" in raw else None
    except KeyError as exc:
        raise ValueError(f"missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ValueError(f"malformed plant matrices: {exc}") from None
    if bias.shape != (m_y,):
        raise ValueError(f"bias must have {m_y} entries")
    if a.ndim != 3 or a.shape[1:] != (m_y, m_y):
        raise ValueError(f"output_lags must be a list of {m_y}x{m_y} matrices")
    if b.ndim != 3 or b.shape[1:] != (m_y, m_u):
        raise ValueError(f"actuation_lags must be a list of {m_y}x{m_u} matrices")
    if c is not None and c.shape != (m_y, coupling_dim):
        raise ValueError(f"coupling must be a {m_y}x{coupling_dim} matrix")
    if q is not None and q.shape != (m_y, m_u):
        raise ValueError(f"quadratic must be a {m_y}x{m_u} matrix")
    if b.shape[0] == 0:
        raise ValueError("actuation_lags must hold at least the current-actuation matrix")
    for arr in (bias, a, b, c, q):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise ValueError("plant coefficients must be finite")
    d = raw.get("disturbance", {"kind": "none"})
    chans = d.get("channels")
    if chans is not None and any(not 0 <= ch < m_u for ch in chans):
        raise ValueError("disturbance channel out of range")
    dist = Disturbance(
        kind=d.get("kind", "none"),
        magnitude=float(d.get("magnitude", 0.0)),
        onset=int(d.get("onset", 1)),
        period=int(d.get("period", 20)),
        channels=None if chans is None else tuple(int(ch) for ch in chans),
    )
    lo, hi = raw.get("coupling_range", [0.0, 1.0])
    if lo > hi:
        raise ValueError("coupling_range must satisfy lo <= hi")
    return PlantSpec(
        bias=bias,
        output_lags=a,
        actuation_lags=b,
        coupling=c,
        quadratic=q,
        noise_std=float(raw.get("noise_std", 0.0)),
        disturbance=dist,
        coupling_range=(float(lo), float(hi)),
        seed=int(raw.get("seed", 0)),
    )


@dataclass(frozen=True)
class PlantState:
    """True (noise-free) output history and effective actuation history, most recent first."""

    outputs: np.ndarray  # (n_a, m_y)
    actuations: np.ndarray  # (n_b - 1, m_u)

    @classmethod
    def initial(cls, spec: PlantSpec) -> PlantState:
        return cls(np.zeros((spec.output_lags.shape[0], spec.m_y)), np.zeros((spec.actuation_lags.shape[0] - 1, spec.m_u)))


def step_plant(spec: PlantSpec, state: PlantState, u, w, k: int) -> tuple[np.ndarray, np.ndarray, PlantState]:
    """Advance the plant one cycle.

    Returns the measured output y(k), the realised disturbance du(k) and the
    successor state.
    """
    u = np.asarray(u, dtype=float)
    du = spec.disturbance.vector(k, spec.m_u)
    u_eff = u + du
    y = spec.bias.copy()
    for j in range(spec.output_lags.shape[0]):
        y += spec.output_lags[j] @ state.outputs[j]
    y += spec.actuation_lags[0] @ u_eff
    for tau in range(1, spec.actuation_lags.shape[0]):
        y += spec.actuation_lags[tau] @ state.actuations[tau - 1]
    if spec.coupling is not None:
        y += spec.coupling @ np.asarray(w, dtype=float)
    if spec.quadratic is not None:
        y += spec.quadratic @ (u_eff * u_eff)
    outputs = np.vstack([y[None, :], state.outputs[:-1]]) if state.outputs.shape[0] else state.outputs
    acts = np.vstack([u_eff[None, :], state.actuations[:-1]]) if state.actuations.shape[0] else state.actuations
    measured = y
    if spec.noise_std > 0:
        rng = np.random.default_rng([spec.seed, k])
        measured = y + rng.normal(0.0, spec.noise_std, size=y.shape)
    return measured, du, PlantState(outputs, acts)


@dataclass(frozen=True)
class OperatingDataset:
    """Per-cycle operating records of one module: k, u(k), du(k), w(k), y(k)."""

    k: np.ndarray
    u: np.ndarray
    du: np.ndarray
    w: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        n = len(self.k)
        for name in ("u", "du", "w", "y"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ValueError(f"column block {name!r} must be a 2-d array with {n} rows")
        if self.u.shape != self.du.shape:
            raise ValueError("u and du must have the same shape")
        if n > 1 and np.any(np.diff(self.k) <= 0):
            raise ValueError("cycle index k must be strictly increasing")

    def __len__(self) -> int:
        return len(self.k)

    def slice(self, start: int, stop: int | None = None) -> OperatingDataset:
        s = slice(start, stop)
        return OperatingDataset(self.k[s], self.u[s], self.du[s], self.w[s], self.y[s])

    def header(self) -> list[str]:
        cols = ["k"]
        for name in ("u", "du", "w", "y"):
            cols += [f"{name}_{i}" for i in range(getattr(self, name).shape[1])]
        return cols

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for i in range(len(self)):
                row = [str(int(self.k[i]))]
                for block in (self.u, self.du, self.w, self.y):
                    row += [repr(float(v)) for v in block[i]]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path: str | Path) -> OperatingDataset:
        """Read a dataset written by :meth:`to_csv`.

        Header contract: ``k`` followed by ``u_i``, ``du_i``, ``w_i``, ``y_i``
        column groups, each indexed from 0 and contiguous.
        """
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "k":
            raise ValueError(f"{path}: first column must be 'k'")
        header = rows[0]
        groups: dict[str, list[int]] = {"u": [], "du": [], "w": [], "y": []}
        for col, name in enumerate(header[1:], start=1):
            prefix, _, idx = name.rpartition("_")
            if prefix not in groups or not idx.isdigit() or int(idx) != len(groups[prefix]):
                raise ValueError(f"{path}: unexpected column {name!r}")
            groups[prefix].append(col)
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(header))
        blocks = {g: data[:, cols].reshape(len(data), len(cols)) for g, cols in groups.items()}
        return cls(data[:, 0].astype(int), blocks["u"], blocks["du"], blocks["w"], blocks["y"])


@dataclass(frozen=True)
class Excitation:
    """Seeded uniform random parameter schedule; a new value every ``hold`` cycles."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    hold: int = 1


def generate_dataset(spec: PlantSpec, excitation: Excitation, cycles: int, seed: int, coupling: np.ndarray | None = None) -> OperatingDataset:
    """Run the plant for ``cycles`` cycles under a random excitation schedule."""
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    if len(excitation.lower) != spec.m_u:
        raise ValueError("excitation dimension does not match the plant")
    rng = np.random.default_rng(seed)
    lo = np.asarray(excitation.lower, dtype=float)
    hi = np.asarray(excitation.upper, dtype=float)
    c = spec.coupling_dim
    if coupling is None:
        coupling = rng.uniform(*spec.coupling_range, size=(cycles, c))
    state = PlantState.initial(spec)
    ks, us, dus, ys = [], [], [], []
    u = lo.copy()
    for i in range(cycles):
        k = i + 1
        if i % excitation.hold == 0:
            u = rng.uniform(lo, hi)
        y, du, state = step_plant(spec, state, u, coupling[i], k)
        ks.append(k)
        us.append(u)
        dus.append(du)
        ys.append(y)
    return OperatingDataset(np.array(ks), np.array(us), np.array(dus), np.asarray(coupling, dtype=float).reshape(cycles, c), np.array(ys))
