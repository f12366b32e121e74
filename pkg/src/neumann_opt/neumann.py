"""The Neumann optimizer: idealized two-loop form and the flattened practical form.

The practical optimizer stores *displaced* weights ``w = u + mu*m`` where ``u``
are the true parameters and ``m`` the Neumann iterate, so one gradient
evaluation per step at ``w`` is all that is needed.  ``neumann_finalize``
undoes the displacement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .baselines import LrSchedule, NonFiniteGradient, lr_at
from .linalg import DIVERGENCE_FACTOR
from .models import BaseModel, MiniBatch, sample_minibatch


class Divergence(ArithmeticError):
    def __init__(self, step: int, msg: str = "iterate norm exceeded divergence threshold"):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class NeumannHyperParams:
    """Defaults are the published settings; only the learning rate needs tuning.

    ``beta`` is per variable and is multiplied by the parameter count.
    ``anchor`` picks the weights the regularizer and moving average see:
    ``"displaced"`` (the stored ``w``) or ``"implied"`` (``w - mu*m``).
    """

    alpha: float = 1e-7
    beta: float = 1e-5
    gamma: float = 0.99
    mu_min: float = 0.5
    mu_max: float = 0.9
    burnin_epochs: int = 5
    k0_epochs: int = 10
    k_doubling: bool = True
    epsilon_guard: float | None = None
    eta_mode: str = "schedule"
    anchor: str = "displaced"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0,1)")
        if not 0 <= self.mu_min <= self.mu_max < 1:
            raise ValueError("need 0 <= mu_min <= mu_max < 1")
        if self.burnin_epochs < 0 or self.k0_epochs < 1:
            raise ValueError("burnin_epochs must be >= 0 and k0_epochs >= 1")
        if self.eta_mode not in ("schedule", "inverse"):
            raise ValueError("eta_mode must be 'schedule' or 'inverse'")
        if self.anchor not in ("displaced", "implied"):
            raise ValueError("anchor must be 'displaced' or 'implied'")

    def beta_total(self, n: int) -> float:
        return self.beta * n

    def guard(self, n: int) -> float:
        return self.epsilon_guard if self.epsilon_guard is not None else 1e-12 * math.sqrt(n)


@dataclass(frozen=True)
class NeumannSchedules:
    lr: LrSchedule

    @property
    def steps_per_epoch(self) -> int:
        return self.lr.steps_per_epoch


@dataclass(frozen=True)
class NeumannState:
    w: np.ndarray  # displaced weights
    m: np.ndarray
    v: np.ndarray
    t: int = 0  # global step, burn-in included
    main_t: int = 0  # main-phase step
    mu: float = 0.0  # the mu that displaces the current w
    next_reset: int = 1  # main-phase step of the next reset
    period: int = 0  # current reset period K, in steps
    phase: str = "burnin"
    grad_norm: float = 0.0  # of the batch gradient used by the last step


def init_state(w0, hp: NeumannHyperParams, steps_per_epoch: int) -> NeumannState:
    w0 = np.array(w0, dtype=np.float64)
    return NeumannState(
        w=w0,
        m=np.zeros_like(w0),
        v=w0.copy(),
        period=hp.k0_epochs * steps_per_epoch,
        phase="burnin" if hp.burnin_epochs > 0 else "main",
    )


def regularized_gradient(grad, w, v, alpha: float, beta: float, epsilon_guard: float = 0.0) -> np.ndarray:
    """Gradient of f + alpha/3 ||w-v||^3 + beta/||w-v||.

    The regularizer is dropped when ``||w-v|| <= epsilon_guard`` (the repulsive
    term is singular at w = v).
    """
    grad, w, v = (np.asarray(a, dtype=np.float64) for a in (grad, w, v))
    if not (grad.shape == w.shape == v.shape):
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
        raise ValueError("non-finite input to regularized_gradient")
    delta = w - v
    r = np.linalg.norm(delta)
    if r <= epsilon_guard:
        return grad.copy()
    return grad + (alpha * r * r - beta / (r * r)) * (delta / r)


def mu_at(t: int, hp: NeumannHyperParams, steps_per_epoch: int) -> float:
    """Momentum 1 - 1/(1+e) at fractional epoch e = t/steps_per_epoch, clamped."""
    if t < 1:
        raise ValueError("steps are counted from 1")
    e = t / steps_per_epoch
    return min(max(1.0 - 1.0 / (1.0 + e), hp.mu_min), hp.mu_max)


def eta_at(state_t: int, main_t: int, hp: NeumannHyperParams, sched: NeumannSchedules) -> float:
    if hp.eta_mode == "inverse":
        return sched.lr.base_lr / (1.0 + (main_t - 1) / sched.steps_per_epoch)
    return lr_at(sched.lr, state_t)


def _gradient(model, w, batch, step):
    g = model.gradient(w, batch)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient(f"step {step}: non-finite gradient; step rejected")
    return g


def burn_in_step(state: NeumannState, model, batch: MiniBatch, lr_schedule: LrSchedule,
                 hp: NeumannHyperParams) -> NeumannState:
    """Vanilla SGD; the moving average follows the weights."""
    if state.phase != "burnin":
        raise ValueError("burn_in_step called outside the burn-in phase")
    t = state.t + 1
    g = _gradient(model, state.w, batch, t)
    w = state.w - lr_at(lr_schedule, t) * g
    gn = float(np.linalg.norm(g))
    if t >= hp.burnin_epochs * lr_schedule.steps_per_epoch:
        return replace(state, w=w, v=w.copy(), m=np.zeros_like(w), t=t, phase="main", next_reset=1,
                       mu=0.0, grad_norm=gn)
    return replace(state, w=w, v=w.copy(), t=t, grad_norm=gn)


def neumann_step(state: NeumannState, model, batch: MiniBatch, hp: NeumannHyperParams,
                 sched: NeumannSchedules) -> NeumannState:
    """One main-phase step on a freshly drawn batch."""
    if state.phase != "main":
        raise ValueError("neumann_step called during burn-in")
    t, k = state.t + 1, state.main_t + 1
    n = state.w.size
    g = _gradient(model, state.w, batch, t)
    eta = eta_at(t, k, hp, sched)
    mu = mu_at(k, hp, sched.steps_per_epoch)

    if k == state.next_reset:
        m = -eta * g
        period = state.period * 2 if hp.k_doubling else state.period
        new = replace(state, m=m, t=t, main_t=k, mu=mu, next_reset=k + state.period, period=period,
                      grad_norm=float(np.linalg.norm(g)))
    else:
        anchor = state.w if hp.anchor == "displaced" else state.w - state.mu * state.m
        d = regularized_gradient(g, anchor, state.v, hp.alpha, hp.beta_total(n), hp.guard(n))
        m = mu * state.m - eta * d
        w = state.w + mu * m - eta * d
        a = w if hp.anchor == "displaced" else w - mu * m
        v = a + hp.gamma * (state.v - a)
        new = replace(state, w=w, m=m, v=v, t=t, main_t=k, mu=mu, grad_norm=float(np.linalg.norm(g)))

    if not np.all(np.isfinite(new.m)) or np.linalg.norm(new.m) > DIVERGENCE_FACTOR:
        raise Divergence(t)
    return new


def neumann_finalize(state: NeumannState) -> np.ndarray:
    """The undisplaced parameters ``w - mu(T) m``."""
    return state.w - state.mu * state.m


class NeumannOptimizer:
    """Stateful driver dispatching between burn-in and main-phase steps."""

    def __init__(self, w0, hp: NeumannHyperParams, lr_schedule: LrSchedule):
        self.hp = hp
        self.sched = NeumannSchedules(lr_schedule)
        self.state = init_state(w0, hp, lr_schedule.steps_per_epoch)

    def step(self, model, batch: MiniBatch) -> NeumannState:
        if self.state.phase == "burnin":
            self.state = burn_in_step(self.state, model, batch, self.sched.lr, self.hp)
        else:
            self.state = neumann_step(self.state, model, batch, self.hp, self.sched)
        return self.state

    @property
    def params(self) -> np.ndarray:
        return neumann_finalize(self.state)

    def current_lr(self) -> float:
        s = self.state
        if s.phase == "burnin" or s.main_t == 0:
            return lr_at(self.sched.lr, max(1, s.t))
        return eta_at(s.t, s.main_t, self.hp, self.sched)


# -- idealized two-loop form ------------------------------------------------

@dataclass(frozen=True)
class IdealizedParams:
    eta_in: float
    eta_out: float
    K: int
    B: int
    T: int

    def __post_init__(self):
        if self.eta_in <= 0 or self.eta_out <= 0:
            raise ValueError("learning rates must be positive")
        if self.K < 1 or self.T < 0 or self.B < 1:
            raise ValueError("need K >= 1, B >= 1, T >= 0")


def idealized_inner_loop(model, w, batch: MiniBatch, eta_in: float, K: int, step: int = 0) -> np.ndarray:
    """K Neumann sweeps ``m <- m - grad(w + eta_in m)`` on one frozen batch, from ``m = -grad(w)``."""
    m = -model.gradient(w, batch)
    for _ in range(K):
        m = m - model.gradient(w + eta_in * m, batch)
        if not np.all(np.isfinite(m)) or np.linalg.norm(m) > DIVERGENCE_FACTOR:
            raise Divergence(step, "Neumann iterate diverged in the inner loop")
    return m


def idealized_neumann_run(model, data, p: IdealizedParams, rng, w0=None) -> np.ndarray:
    w = np.zeros(model.param_count) if w0 is None else np.array(w0, dtype=np.float64)
    for t in range(1, p.T + 1):
        batch = MiniBatch.full(data) if p.B >= len(data) else sample_minibatch(data, p.B, rng)
        w = w + p.eta_out * idealized_inner_loop(model, w, batch, p.eta_in, p.K, t)
    return w


# -- diagnostic ---------------------------------------------------------------

def has_exact_hvp(model) -> bool:
    return type(model).hvp is not BaseModel.hvp


def convexified_direction_check(model, w, batch: MiniBatch, mu: float, eta: float, k_steps: int,
                                m0=None) -> np.ndarray:
    """Gradient-evaluation recurrence minus its exact Hessian form after ``k_steps``.

    gradient form:  m <- mu m - eta grad(w + mu m)
    matrix form:    m <- mu m - eta (grad(w) + mu H m)
                      = (I - B) m - eta grad(w),  B = (1-mu) I + mu eta H
    Both start from ``m0`` (default ``-eta grad(w)``).  The two agree exactly
    when the loss is quadratic.
    """
    if not has_exact_hvp(model):
        raise ValueError("convexified_direction_check needs a model with an exact hvp")
    g = model.gradient(w, batch)
    m_grad = -eta * g if m0 is None else np.array(m0, dtype=np.float64)
    m_mat = m_grad.copy()
    for _ in range(k_steps):
        m_grad = mu * m_grad - eta * model.gradient(w + mu * m_grad, batch)
        m_mat = mu * m_mat - eta * (g + mu * model.hvp(w, batch, m_mat))
    return m_grad - m_mat
