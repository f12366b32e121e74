"""First-order reference optimizers and the staircase learning-rate schedule.

Each ``*_step`` is a pure function ``(state, w, grad, lr) -> (state', w')``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class NonFiniteGradient(ArithmeticError):
    pass


@dataclass(frozen=True)
class LrSchedule:
    """Linear warm-up followed by staircase decay, all counted in epochs."""

    base_lr: float
    steps_per_epoch: int
    warmup_epochs: int = 0
    decay_every_epochs: int = 0
    decay_factor: float = 1.0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be at least 1")


def lr_at(schedule: LrSchedule, t: int) -> float:
    """Learning rate for 1-based step ``t``.

    During warm-up the rate climbs linearly from ``base_lr/warmup_steps`` and hits
    ``base_lr`` on the last warm-up step.  Afterwards it decays by
    ``decay_factor`` once per ``decay_every_epochs`` completed epochs.
    """
    if t < 1:
        raise ValueError("steps are counted from 1")
    s = schedule
    warmup_steps = s.warmup_epochs * s.steps_per_epoch
    if t <= warmup_steps:
        return s.base_lr * t / warmup_steps
    if s.decay_every_epochs <= 0 or s.decay_factor == 1.0:
        return s.base_lr
    epoch = (t - 1) // s.steps_per_epoch  # completed epochs before this step
    n_decays = max(0, epoch - s.warmup_epochs) // s.decay_every_epochs
    return s.base_lr * s.decay_factor**n_decays


@dataclass
class OptimizerState:
    variant: str
    t: int = 0
    buf: np.ndarray | None = None  # momentum displacement / Adam first moment
    sq: np.ndarray | None = None  # Adam second moment / RMSProp average
    hyper: dict = field(default_factory=dict)


DEFAULTS = {
    "sgd": {},
    "momentum": {"mu": 0.9},
    "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "rmsprop": {"rho": 0.9, "eps": 1e-10},
}


def init_state(variant: str, n: int, **hyper) -> OptimizerState:
    if variant not in DEFAULTS:
        raise ValueError(f"unknown optimizer {variant!r}")
    unknown = set(hyper) - set(DEFAULTS[variant])
    if unknown:
        raise ValueError(f"unknown {variant} hyperparameters: {sorted(unknown)}")
    zeros = np.zeros(n)
    return OptimizerState(variant, 0, zeros.copy(), zeros.copy(), {**DEFAULTS[variant], **hyper})


def _check(state, w, grad):
    if w.shape != grad.shape or (state.buf is not None and state.buf.shape != w.shape):
        raise ValueError("dimension mismatch between state, weights and gradient")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains non-finite values; step rejected")


def sgd_step(state: OptimizerState, w, grad, lr: float):
    _check(state, w, grad)
    return replace(state, t=state.t + 1), w - lr * grad


def momentum_step(state: OptimizerState, w, grad, lr: float):
    """Heavy-ball with the buffer holding the displacement: m' = mu m - lr g, w' = w + m'."""
    _check(state, w, grad)
    m = state.hyper["mu"] * state.buf - lr * grad
    return replace(state, t=state.t + 1, buf=m), w + m


def adam_step(state: OptimizerState, w, grad, lr: float):
    _check(state, w, grad)
    b1, b2, eps = state.hyper["beta1"], state.hyper["beta2"], state.hyper["eps"]
    t = state.t + 1
    m = b1 * state.buf + (1 - b1) * grad
    v = b2 * state.sq + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return replace(state, t=t, buf=m, sq=v), w - lr * m_hat / (np.sqrt(v_hat) + eps)


def rmsprop_step(state: OptimizerState, w, grad, lr: float):
    _check(state, w, grad)
    rho, eps = state.hyper["rho"], state.hyper["eps"]
    v = rho * state.sq + (1 - rho) * grad * grad
    return replace(state, t=state.t + 1, sq=v), w - lr * grad / (np.sqrt(v) + eps)


STEPS = {
    "sgd": sgd_step,
    "momentum": momentum_step,
    "adam": adam_step,
    "rmsprop": rmsprop_step,
}


def step(state: OptimizerState, w, grad, lr: float):
    return STEPS[state.variant](state, w, grad, lr)


def linear_scaled_lr(base_lr: float, batch_size: int, reference_batch: int) -> float:
    """Linear learning-rate scaling with batch size."""
    return base_lr * batch_size / reference_batch

