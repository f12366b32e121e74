"""Lanczos estimates of extremal mini-batch Hessian eigenvalues."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write_text, read_checkpoint
from .linalg import LinearOperator, RngStream, dense_sym_eigs
from .models import MiniBatch, sample_minibatch

BREAKDOWN_TOL = 1e-12
SHIFT_INFLATION = 1.1
PROBE_HEADER = ["step", "lambda_min", "lambda_max", "batch_seed"]


@dataclass(frozen=True)
class TridiagonalMatrix:
    alphas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64).reshape(-1)
        b = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if a.size < 1 or b.size != a.size - 1:
            raise ValueError("need k diagonal and k-1 off-diagonal entries")
        if np.any(b < 0):
            raise ValueError("off-diagonal entries must be nonnegative")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "betas", b)

    @property
    def k(self) -> int:
        return self.alphas.size

    def to_dense(self) -> np.ndarray:
        return np.diag(self.alphas) + np.diag(self.betas, 1) + np.diag(self.betas, -1)


@dataclass(frozen=True)
class RitzSpectrum:
    values: np.ndarray
    k: int
    shift_used: float | None = None


@dataclass(frozen=True)
class ProbeRecord:
    step: int
    lambda_min_est: float
    lambda_max_est: float
    batch_seed: int


def lanczos(A: LinearOperator, k: int, rng) -> TridiagonalMatrix:
    """k steps of Lanczos with full reorthogonalization from a random unit vector.

    Stops early on breakdown (an invariant subspace was found) and returns the
    leading j x j block.
    """
    if not 1 <= k <= A.dim:
        raise ValueError(f"need 1 <= k <= {A.dim}, got k={k}")
    Q = np.zeros((k, A.dim))
    alphas, betas = [], []
    q = rng.standard_normal(A.dim)
    q /= np.linalg.norm(q)
    q_prev = np.zeros(A.dim)
    beta = 0.0
    for j in range(k):
        Q[j] = q
        r = A @ q
        # Rayleigh quotient; exact for A = I even when ||q|| is off by an ulp
        alpha = float(np.dot(q, r) / np.dot(q, q))
        alphas.append(alpha)
        if j == k - 1:
            break
        r = r - alpha * q - beta * q_prev
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            r -= Q[: j + 1].T @ (Q[: j + 1] @ r)
        beta = float(np.linalg.norm(r))
        if not (np.isfinite(alpha) and np.isfinite(beta)):
            raise ArithmeticError("non-finite Lanczos coefficients (is the operator symmetric?)")
        if beta < BREAKDOWN_TOL:
            break
        betas.append(beta)
        q_prev, q = q, r / beta
    if not np.isfinite(alphas[-1]):
        raise ArithmeticError("non-finite Lanczos coefficients (is the operator symmetric?)")
    return TridiagonalMatrix(np.array(alphas), np.array(betas))


def ritz_values(T: TridiagonalMatrix) -> np.ndarray:
    return dense_sym_eigs(T.to_dense())


def ritz_spectrum(A: LinearOperator, k: int, rng, shift: float | None = None) -> RitzSpectrum:
    """Ritz values of ``A`` (or of ``A - shift*I``) after ``k`` Lanczos steps."""
    op = A if shift is None else A.shifted(shift)
    T = lanczos(op, k, rng)
    return RitzSpectrum(ritz_values(T), T.k, shift)


def hessian_operator(model, w, batch: MiniBatch) -> LinearOperator:
    return LinearOperator(model.param_count, lambda v: model.hvp(w, batch, v))


def extremal_eigs(model, w, batch: MiniBatch, k: int = 10, rng=None) -> tuple[float, float]:
    """(lambda_min, lambda_max) of the mini-batch Hessian.

    lambda_max is the top Ritz value of a plain run.  lambda_min comes from a
    second run on ``H - s I`` with ``s`` the inflated lambda_max bound, so the
    most negative eigenvalue becomes the dominant one.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = rng if rng is not None else RngStream(0)
    H = hessian_operator(model, w, batch)
    k = min(k, H.dim)
    lam_max = float(ritz_spectrum(H, k, rng).values[-1])
    shift = lam_max + (SHIFT_INFLATION - 1.0) * abs(lam_max)
    lam_min = float(ritz_spectrum(H, k, rng, shift).values[0]) + shift
    return min(lam_min, lam_max), lam_max


def trajectory_probe(checkpoint_paths, model, dataset, k: int = 10, batch_size: int = 128,
                     rng: RngStream | None = None) -> list[ProbeRecord]:
    """Probe every checkpoint on its own fresh batch; seeds are recorded for replay."""
    rng = rng if rng is not None else RngStream(0)
    records = []
    for i, path in enumerate(checkpoint_paths):
        ckpt = read_checkpoint(path)
        if ckpt.param_count != model.param_count:
            raise ValueError(f"{path}: checkpoint has {ckpt.param_count} parameters, model expects {model.param_count}")
        batch_seed = int(rng.substream("probe-batch", i).integers(0, 2**63 - 1))
        stream = RngStream(batch_seed)
        batch = sample_minibatch(dataset, min(batch_size, len(dataset)), stream.substream("batch"))
        lo, hi = extremal_eigs(model, ckpt.weights, batch, k, stream.substream("lanczos"))
        records.append(ProbeRecord(int(ckpt.step), lo, hi, batch_seed))
    return records


def format_probe_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PROBE_HEADER)
    for r in records:
        writer.writerow([r.step, f"{r.lambda_min_est:.17g}", f"{r.lambda_max_est:.17g}", r.batch_seed])
    return buf.getvalue()


def write_probe_csv(path, records) -> Path:
    return atomic_write_text(path, format_probe_csv(records))
