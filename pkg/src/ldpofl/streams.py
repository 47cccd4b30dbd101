"""Streaming client data, per-sample losses and gradient clipping.

A :class:`DataStream` is a fully materialized, immutable table of ``R x n x
tau`` samples.  Learners read it one sample at a time in arrival order; the
regret computation reads whole rounds from the same table.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from scipy.special import expit

LOGISTIC = "logistic"
QUADRATIC = "quadratic"


@dataclasses.dataclass(frozen=True)
class StreamSample:
    kind: str
    x: np.ndarray  # feature (logistic) or center (quadratic)
    label: float = 0.0
    learner_id: int = 0
    round: int = 0
    step: int = 0


@dataclasses.dataclass(frozen=True, eq=False)
class DataStream:
    """Samples indexed ``[round, learner, step]``.

    ``points`` has shape ``(R, n, tau, d)``; ``labels`` has shape ``(R, n,
    tau)`` and is all zeros for quadratic streams.
    """

    kind: str
    points: np.ndarray
    labels: np.ndarray
    params: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (LOGISTIC, QUADRATIC):
            raise ValueError(f"unknown stream kind {self.kind!r}")
        if self.points.ndim != 4 or self.labels.shape != self.points.shape[:3]:
            raise ValueError("points must be (R, n, tau, d) and labels (R, n, tau)")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("stream contains non-finite values")
        if self.kind == LOGISTIC and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("logistic labels must be -1 or +1")
        self.points.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def R(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def tau(self) -> int:
        return self.points.shape[2]

    @property
    def dim(self) -> int:
        return self.points.shape[3]

    def __len__(self) -> int:
        return self.R * self.n * self.tau

    def sample(self, r: int, i: int, t: int) -> StreamSample:
        return StreamSample(self.kind, self.points[r, i, t], float(self.labels[r, i, t]), i, r, t)

    def __iter__(self) -> Iterator[StreamSample]:
        for r in range(self.R):
            for i in range(self.n):
                for t in range(self.tau):
                    yield self.sample(r, i, t)

    def round_slice(self, r: int) -> "DataStream":
        return DataStream(self.kind, self.points[r:r + 1].copy(), self.labels[r:r + 1].copy())

    def head(self, rounds: int) -> "DataStream":
        return DataStream(self.kind, self.points[:rounds].copy(), self.labels[:rounds].copy(),
                          dict(self.params))


# -- losses --------------------------------------------------------------------


def _check_dims(x: np.ndarray, v: np.ndarray) -> None:
    if x.shape != v.shape:
        raise ValueError(f"dimension mismatch: model {x.shape} vs sample {v.shape}")


def logistic_loss_grad(x: np.ndarray, s: StreamSample) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    _check_dims(x, s.x)
    margin = s.label * float(x @ s.x)
    loss = float(np.logaddexp(0.0, -margin))
    grad = -s.label * expit(-margin) * s.x
    return loss, grad


def quadratic_loss_grad(x: np.ndarray, s: StreamSample) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    _check_dims(x, s.x)
    diff = x - s.x
    return 0.5 * float(diff @ diff), diff


def loss_grad(x: np.ndarray, s: StreamSample) -> tuple[float, np.ndarray]:
    if s.kind == LOGISTIC:
        return logistic_loss_grad(x, s)
    return quadratic_loss_grad(x, s)


def batch_losses(kind: str, x: np.ndarray, points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample losses of model ``x`` over ``points`` with shape ``(..., d)``."""
    if kind == LOGISTIC:
        return np.logaddexp(0.0, -labels * (points @ x))
    diff = x - points
    return 0.5 * np.einsum("...d,...d->...", diff, diff)


def clip_gradient(g: np.ndarray, clip_bound: float) -> np.ndarray:
    if not clip_bound > 0:
        raise ValueError(f"clip_bound must be positive, got {clip_bound!r}")
    norm = float(np.linalg.norm(g))
    if norm <= clip_bound:
        return g
    return g * (clip_bound / norm)


# -- generators ---------------------------------------------------------------


def _seed(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *tags]))


def sample_logistic_labels(features: np.ndarray, w: np.ndarray,
                           rng: np.random.Generator) -> np.ndarray:
    """Labels in {-1, +1} with ``P(+1) = sigmoid(features @ w)``."""
    p = expit(features @ w)
    return np.where(rng.random(p.shape) < p, 1.0, -1.0)


def gen_heterogeneous_logistic(n: int, R: int, tau: int, dim: int, alpha: float,
                               beta: float, seed: int) -> DataStream:
    """Synthetic(alpha, beta)-style binary logistic data.

    Learner ``i`` has model ``w_i = u_i 1 + w0`` with ``u_i ~ N(0, alpha)`` and
    feature mean ``v_i = B_i 1 + v0`` with ``B_i ~ N(0, beta)``, where ``w0``
    and ``v0`` are standard normal vectors shared by all learners.  Features
    are ``N(v_i, diag(k^-1.2))``; labels follow the logistic model of ``w_i``
    on the raw feature, after which features are projected onto the unit ball.
    """
    if min(n, R, tau, dim) < 1:
        raise ValueError("n, R, tau and dim must be positive")
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    rng = _seed(seed, 0)
    w0 = rng.standard_normal(dim)
    v0 = rng.standard_normal(dim)
    u = rng.normal(0.0, np.sqrt(alpha), size=n)
    b = rng.normal(0.0, np.sqrt(beta), size=n)
    w = u[:, None] + w0[None, :]
    v = b[:, None] + v0[None, :]
    scale = np.arange(1, dim + 1, dtype=float) ** -0.6

    points = np.empty((R, n, tau, dim))
    labels = np.empty((R, n, tau))
    for i in range(n):
        lrng = _seed(seed, 1, i)
        a = v[i] + lrng.standard_normal((R, tau, dim)) * scale
        labels[:, i] = sample_logistic_labels(a, w[i], lrng)
        norms = np.linalg.norm(a, axis=-1, keepdims=True)
        points[:, i] = a / np.maximum(norms, 1.0)
    params = {"kind": LOGISTIC, "alpha": alpha, "beta": beta, "seed": seed}
    return DataStream(LOGISTIC, points, labels, params)


def unit_vectors(count: int, dim: int, seed: int) -> np.ndarray:
    rng = _seed(seed, 2)
    g = rng.standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def gen_drifting_quadratic(n: int, R: int, tau: int, dim: int, drift_magnitude: float,
                           drift_period: int, seed: int, spread: float = 1.0,
                           sample_noise: float = 0.0) -> DataStream:
    """Quadratic losses ``0.5 ||x - center||^2`` whose optimum drifts.

    Learner ``i`` has a base center drawn from ``N(0, spread^2 I / dim)``.  The
    shared offset is a random walk that takes a step of length
    ``drift_magnitude`` along a seeded unit vector at the start of every
    ``drift_period`` rounds, starting from zero in the first period.  Optional
    ``sample_noise`` adds i.i.d. Gaussian jitter per sample.
    """
    if drift_period < 1:
        raise ValueError("drift_period must be >= 1")
    if min(n, R, tau, dim) < 1:
        raise ValueError("n, R, tau and dim must be positive")
    rng = _seed(seed, 3)
    base = rng.standard_normal((n, dim)) * (spread / np.sqrt(dim))
    epochs = (R - 1) // drift_period + 1
    steps = unit_vectors(epochs, dim, seed) * drift_magnitude
    steps[0] = 0.0
    offsets = np.cumsum(steps, axis=0)
    per_round = offsets[np.arange(R) // drift_period]
    points = np.broadcast_to(
        base[None, :, None, :] + per_round[:, None, None, :], (R, n, tau, dim)
    ).copy()
    if sample_noise > 0:
        points += _seed(seed, 4).standard_normal(points.shape) * sample_noise
    params = {"kind": QUADRATIC, "drift_magnitude": drift_magnitude,
              "drift_period": drift_period, "seed": seed, "spread": spread,
              "sample_noise": sample_noise}
    return DataStream(QUADRATIC, points, np.zeros((R, n, tau)), params)


def make_stream(data_spec: dict, n: int, R: int, tau: int, dim: int,
                seed: Optional[int] = None) -> DataStream:
    """Build a stream from a config ``data_spec`` mapping.

    ``{"kind": "csv", "path": ...}`` loads a sample table written by
    :func:`dump_stream`; its shape must match ``(R, n, tau, dim)``.
    """
    opts = dict(data_spec)
    kind = opts.pop("kind", LOGISTIC)
    if kind == "csv":
        stream = load_stream(opts["path"])
        shape = (stream.R, stream.n, stream.tau, stream.dim)
        if shape != (R, n, tau, dim):
            raise ValueError(f"{opts['path']}: sample table has (R, n, tau, d) = {shape}, "
                             f"config needs {(R, n, tau, dim)}")
        return stream
    if seed is None:
        seed = opts.pop("seed", 0)
    else:
        opts.pop("seed", None)
    if kind == LOGISTIC:
        return gen_heterogeneous_logistic(n, R, tau, dim, opts.pop("alpha", 0.0),
                                          opts.pop("beta", 0.0), seed, **opts)
    if kind == QUADRATIC:
        return gen_drifting_quadratic(n, R, tau, dim, opts.pop("drift_magnitude", 0.0),
                                      opts.pop("drift_period", 1), seed, **opts)
    raise ValueError(f"unknown data_spec kind {kind!r}")


# -- CSV sample table --------------------------------------------------------


def dump_stream(stream: DataStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", stream.kind])
        w.writerow(["learner", "round", "step", "label"] + [f"f{j}" for j in range(stream.dim)])
        for r in range(stream.R):
            for i in range(stream.n):
                for t in range(stream.tau):
                    row = [i, r, t, repr(float(stream.labels[r, i, t]))]
                    row.extend(repr(float(v)) for v in stream.points[r, i, t])
                    w.writerow(row)


def load_stream(path) -> DataStream:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader)
        if len(first) != 2 or first[0] != "kind":
            raise ValueError(f"{path}: first line must be 'kind,<name>'")
        kind = first[1]
        header = next(reader)
        dim = len(header) - 4
        rows = [row for row in reader if row]
    idx = np.array([[int(v) for v in row[:3]] for row in rows])
    n, R, tau = (idx.max(axis=0) + 1) if len(idx) else (0, 0, 0)
    if len(rows) != n * R * tau:
        raise ValueError(f"{path}: sample table is not a complete (learner, round, step) grid")
    points = np.empty((R, n, tau, dim))
    labels = np.empty((R, n, tau))
    for (i, r, t), row in zip(idx, rows):
        labels[r, i, t] = float(row[3])
        points[r, i, t] = [float(v) for v in row[4:]]
    return DataStream(kind, points, labels)
