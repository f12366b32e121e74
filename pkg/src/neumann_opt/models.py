"""Loss models, datasets, mini-batch sampling and the built-in test problems."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol

import numpy as np

from .linalg import RngStream, as_vector, finite_diff_hvp


@dataclass(frozen=True)
class Dataset:
    """Samples stored column-wise: ``features`` is (N, d), ``targets`` is (N,)."""

    features: np.ndarray
    targets: np.ndarray
    kind: str = "classification"

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if X.shape[0] == 0:
            raise ValueError("empty dataset")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "classification" and not np.all((y == 0) | (y == 1)):
            raise ValueError("classification targets must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size < 1:
            raise ValueError("mini-batch must contain at least one index")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return self.indices.size

    @classmethod
    def full(cls, dataset_or_n) -> "MiniBatch":
        n = dataset_or_n if isinstance(dataset_or_n, int) else len(dataset_or_n)
        return cls(np.arange(n))


class EpochSampler:
    """Shuffled-epoch sampler over a pool of dataset indices.

    Each epoch draws a fresh permutation of the pool and emits consecutive
    chunks of ``batch_size``; a trailing short chunk is dropped so every batch
    has the same size.
    """

    def __init__(self, pool, batch_size: int, rng: RngStream):
        pool = np.arange(pool) if isinstance(pool, (int, np.integer)) else np.asarray(pool, dtype=np.int64)
        if not 1 <= batch_size <= pool.size:
            raise ValueError(f"batch size {batch_size} must be in [1, {pool.size}]")
        self.pool = pool
        self.batch_size = batch_size
        self.rng = rng
        self.epoch = 0
        self._queue: list[MiniBatch] = []

    @property
    def steps_per_epoch(self) -> int:
        return self.pool.size // self.batch_size

    def epoch_batches(self) -> list[MiniBatch]:
        perm = self.pool[self.rng.permutation(self.pool.size)]
        self.epoch += 1
        B = self.batch_size
        return [MiniBatch(perm[i * B:(i + 1) * B]) for i in range(self.steps_per_epoch)]

    def __iter__(self) -> Iterator[MiniBatch]:
        return self

    def __next__(self) -> MiniBatch:
        if not self._queue:
            self._queue = self.epoch_batches()[::-1]
        return self._queue.pop()


def sample_minibatch(dataset: Dataset, B: int, rng: RngStream) -> MiniBatch:
    """One batch of ``B`` distinct indices: the head of a fresh shuffle."""
    N = len(dataset)
    if not 1 <= B <= N:
        raise ValueError(f"batch size {B} must be in [1, {N}]")
    return MiniBatch(rng.permutation(N)[:B])


# -- the oracle interface -----------------------------------------------------

class LossModel(Protocol):
    param_count: int

    def loss(self, w: np.ndarray, batch: MiniBatch) -> float: ...

    def gradient(self, w: np.ndarray, batch: MiniBatch) -> np.ndarray: ...

    def hvp(self, w: np.ndarray, batch: MiniBatch, v: np.ndarray) -> np.ndarray: ...

    def predict(self, w: np.ndarray, features: np.ndarray) -> np.ndarray: ...


class BaseModel:
    """Shared plumbing: finite-difference HVP fallback and accuracy."""

    dataset: Dataset
    param_count: int

    def _check_w(self, w) -> np.ndarray:
        w = as_vector(w, "w")
        if w.shape[0] != self.param_count:
            raise ValueError(f"expected {self.param_count} parameters, got {w.shape[0]}")
        return w

    def per_sample_losses(self, w, batch: MiniBatch) -> np.ndarray:
        raise NotImplementedError

    def loss(self, w, batch: MiniBatch) -> float:
        return float(np.mean(self.per_sample_losses(w, batch)))

    def hvp(self, w, batch: MiniBatch, v) -> np.ndarray:
        return finite_diff_hvp(lambda u: self.gradient(u, batch), w, v)

    def predict(self, w, features) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, w, batch: MiniBatch) -> float | None:
        if self.dataset.kind != "classification":
            return None
        p = self.predict(w, self.dataset.features[batch.indices])
        return float(np.mean((p > 0.5) == (self.dataset.targets[batch.indices] == 1)))

    def init_params(self, rng: RngStream, scale: float = 0.1) -> np.ndarray:
        return scale * rng.standard_normal(self.param_count)


def _dyadic(x: np.ndarray, bits: int = 30) -> np.ndarray:
    # values on a 2**-bits grid add exactly in any order (no rounding)
    return np.round(x * 2.0**bits) / 2.0**bits


class QuadraticModel(BaseModel):
    """f_i(w) = 1/2 (w-w*)^T H (w-w*) + (w-w*)^T xi_i with H = diag(spectrum).

    The noise vectors xi_i live in ``dataset.features`` and sum to exactly zero.
    """

    def __init__(self, spectrum, w_star, dataset: Dataset):
        self.spectrum = as_vector(spectrum, "spectrum")
        self.w_star = as_vector(w_star, "w_star")
        if self.spectrum.shape != self.w_star.shape:
            raise ValueError("spectrum and w_star must have the same length")
        if dataset.feature_dim != self.spectrum.size:
            raise ValueError("noise vectors must match the parameter dimension")
        self.dataset = dataset
        self.param_count = self.spectrum.size

    def per_sample_losses(self, w, batch):
        d = self._check_w(w) - self.w_star
        xi = self.dataset.features[batch.indices]
        return 0.5 * np.dot(d, self.spectrum * d) + xi @ d

    def gradient(self, w, batch):
        d = self._check_w(w) - self.w_star
        xi = self.dataset.features[batch.indices]
        return self.spectrum * d + xi.sum(axis=0) / batch.size

    def hvp(self, w, batch, v):
        return self.spectrum * as_vector(v, "v")

    def hessian(self, w=None, batch=None) -> np.ndarray:
        return np.diag(self.spectrum)

    def predict(self, w, features):
        return np.zeros(np.atleast_2d(features).shape[0])


def make_quadratic_problem(spectrum, w_star=None, noise: float = 0.0, N: int = 100, seed: int = 0):
    spectrum = as_vector(spectrum, "spectrum")
    n = spectrum.size
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = RngStream(seed).substream("quadratic")
    if w_star is None:
        w_star = rng.standard_normal(n)
    # antithetic pairs (z, -z) plus a zero row when N is odd: the sum is exactly 0
    z = _dyadic(noise * rng.standard_normal((N // 2, n)))
    rows = np.empty((N, n))
    rows[0:2 * (N // 2):2] = z
    rows[1:2 * (N // 2):2] = -z
    if N % 2:
        rows[-1] = 0.0
    data = Dataset(rows, np.zeros(N), kind="regression")
    return QuadraticModel(spectrum, w_star, data), data


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


class LogisticModel(BaseModel):
    """Binary cross-entropy with a bias term and an L2 penalty ``l2/2 * ||w||^2``.

    Parameters are ``[weights (d), bias]``.
    """

    def __init__(self, dataset: Dataset, l2: float = 1e-4):
        self.dataset = dataset
        self.l2 = l2
        self.param_count = dataset.feature_dim + 1
        self._Xb = np.hstack([dataset.features, np.ones((len(dataset), 1))])

    def _logits(self, w, idx):
        return self._Xb[idx] @ w

    def per_sample_losses(self, w, batch):
        w = self._check_w(w)
        z = self._logits(w, batch.indices)
        y = self.dataset.targets[batch.indices]
        # -y log s(z) - (1-y) log(1-s(z)) = softplus(z) - y z
        return _softplus(z) - y * z + 0.5 * self.l2 * np.dot(w, w)

    def gradient(self, w, batch):
        w = self._check_w(w)
        Xb = self._Xb[batch.indices]
        r = _sigmoid(Xb @ w) - self.dataset.targets[batch.indices]
        return Xb.T @ r / batch.size + self.l2 * w

    def hvp(self, w, batch, v):
        w = self._check_w(w)
        v = as_vector(v, "v")
        Xb = self._Xb[batch.indices]
        s = _sigmoid(Xb @ w)
        return Xb.T @ (s * (1 - s) * (Xb @ v)) / batch.size + self.l2 * v

    def hessian(self, w, batch) -> np.ndarray:
        Xb = self._Xb[batch.indices]
        s = _sigmoid(Xb @ self._check_w(w))
        return (Xb.T * (s * (1 - s))) @ Xb / batch.size + self.l2 * np.eye(self.param_count)

    def predict(self, w, features):
        F = np.atleast_2d(features)
        return _sigmoid(F @ w[:-1] + w[-1])


def make_logistic_problem(feature_dim: int, N: int, separation: float = 1.0, seed: int = 0):
    """Two Gaussian blobs at +-separation/2 along a random unit direction."""
    if feature_dim < 1 or N < 2:
        raise ValueError("need feature_dim >= 1 and N >= 2")
    rng = RngStream(seed).substream("logistic")
    direction = rng.standard_normal(feature_dim)
    direction /= np.linalg.norm(direction)
    y = np.zeros(N)
    y[: N // 2] = 1.0
    y = y[rng.permutation(N)]
    X = rng.standard_normal((N, feature_dim)) + np.outer(y - 0.5, separation * direction)
    data = Dataset(X, y)
    return LogisticModel(data), data


class MLPModel(BaseModel):
    """One hidden tanh layer, sigmoid output, binary cross-entropy.

    Flat parameter layout: ``W1 (h*d, row-major), b1 (h), w2 (h), b2 (1)``.
    """

    def __init__(self, dataset: Dataset, hidden_width: int):
        if hidden_width < 1:
            raise ValueError("hidden_width must be at least 1")
        self.dataset = dataset
        self.d = dataset.feature_dim
        self.h = hidden_width
        self.param_count = self.h * self.d + 2 * self.h + 1

    def unpack(self, w):
        h, d = self.h, self.d
        W1 = w[: h * d].reshape(h, d)
        b1 = w[h * d: h * d + h]
        w2 = w[h * d + h: h * d + 2 * h]
        b2 = w[-1]
        return W1, b1, w2, b2

    def _forward(self, w, X):
        W1, b1, w2, b2 = self.unpack(self._check_w(w))
        a = np.tanh(X @ W1.T + b1)
        return a, a @ w2 + b2

    def per_sample_losses(self, w, batch):
        _, z = self._forward(w, self.dataset.features[batch.indices])
        y = self.dataset.targets[batch.indices]
        return _softplus(z) - y * z

    def gradient(self, w, batch):
        X = self.dataset.features[batch.indices]
        y = self.dataset.targets[batch.indices]
        W1, b1, w2, b2 = self.unpack(self._check_w(w))
        a, z = self._forward(w, X)
        dz = (_sigmoid(z) - y) / batch.size
        da = np.outer(dz, w2) * (1 - a * a)
        return np.concatenate([(da.T @ X).ravel(), da.sum(axis=0), a.T @ dz, [dz.sum()]])

    def predict(self, w, features):
        _, z = self._forward(w, np.atleast_2d(features))
        return _sigmoid(z)

    def init_params(self, rng: RngStream, scale: float | None = None) -> np.ndarray:
        # Glorot-style scale for the hidden layer, small output layer
        w = np.zeros(self.param_count)
        hd = self.h * self.d
        s1 = scale if scale is not None else math.sqrt(2.0 / (self.d + self.h))
        w[:hd] = s1 * rng.standard_normal(hd)
        w[hd + self.h: hd + 2 * self.h] = (scale if scale is not None else 1.0 / math.sqrt(self.h)) * rng.standard_normal(self.h)
        return w


def make_mlp_problem(feature_dim: int = 2, hidden_width: int = 8, N: int = 512, seed: int = 0, noise: float = 0.35):
    """XOR-style data: four Gaussian clusters at the corners of the first two coordinates."""
    if feature_dim < 2:
        raise ValueError("the XOR generator needs feature_dim >= 2")
    rng = RngStream(seed).substream("mlp")
    corners = rng.integers(0, 4, size=N)
    sx = np.where(corners & 1, 1.0, -1.0)
    sy = np.where(corners & 2, 1.0, -1.0)
    X = noise * rng.standard_normal((N, feature_dim))
    X[:, 0] += sx
    X[:, 1] += sy
    y = (sx * sy > 0).astype(np.float64)
    data = Dataset(X, y)
    return MLPModel(data, hidden_width), data


def load_csv(path) -> Dataset:
    """Read ``f1,...,fd,target`` rows after a single header line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset file: {path}")
    rows, targets = [], []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty dataset")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
            try:
                vals = [float(x) for x in row]
            except ValueError:
                raise ValueError(f"{path}: row {lineno} has a non-numeric field") from None
            rows.append(vals[:-1])
            targets.append(vals[-1])
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    if width < 2:
        raise ValueError(f"{path}: need at least one feature column and a target")
    y = np.array(targets)
    kind = "classification" if np.all((y == 0) | (y == 1)) else "regression"
    return Dataset(np.array(rows), y, kind=kind)


def dense_hessian(model, w, batch: MiniBatch) -> np.ndarray:
    """Assemble the mini-batch Hessian column by column from HVPs, symmetrized."""
    n = model.param_count
    eye = np.eye(n)
    H = np.column_stack([model.hvp(w, batch, eye[:, i]) for i in range(n)])
    return 0.5 * (H + H.T)
