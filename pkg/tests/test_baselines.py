import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_opt.baselines import (LrSchedule, NonFiniteGradient, adam_step, init_state, linear_scaled_lr,
                                   lr_at, momentum_step, rmsprop_step, sgd_step, step)
from neumann_opt.models import MiniBatch, make_logistic_problem, make_quadratic_problem


# -- schedule ------------------------------------------------------------------

def test_warmup_endpoint_is_base():
    s = LrSchedule(0.3, steps_per_epoch=7, warmup_epochs=5)
    assert lr_at(s, 35) == 0.3
    assert lr_at(s, 1) == pytest.approx(0.3 / 35)


def test_warmup_is_linear_and_increasing():
    s = LrSchedule(1.0, steps_per_epoch=4, warmup_epochs=3)
    lrs = [lr_at(s, t) for t in range(1, 13)]
    np.testing.assert_allclose(lrs, np.arange(1, 13) / 12)


def test_no_decay_is_constant():
    s = LrSchedule(0.1, steps_per_epoch=10, warmup_epochs=2, decay_every_epochs=3, decay_factor=1.0)
    assert {lr_at(s, t) for t in range(21, 500)} == {0.1}


def test_staircase_decay_epoch_40():
    # oracle: 0.045 * 0.94**20 computed separately = 0.013054780850915767
    s = LrSchedule(0.045, steps_per_epoch=10, decay_every_epochs=2, decay_factor=0.94)
    assert lr_at(s, 40 * 10 + 1) == pytest.approx(0.013054780850915767, rel=1e-14)
    assert lr_at(s, 40 * 10) == pytest.approx(0.045 * 0.94**19, rel=1e-14)


def test_schedule_validation():
    with pytest.raises(ValueError):
        LrSchedule(0.0, 10)
    with pytest.raises(ValueError):
        LrSchedule(0.1, 10, decay_factor=1.5)
    with pytest.raises(ValueError):
        lr_at(LrSchedule(0.1, 10), 0)


def test_linear_scaling():
    assert linear_scaled_lr(0.1, 512, 128) == pytest.approx(0.4)


# -- step rules ---------------------------------------------------------------

def test_sgd_example():
    st_, w = sgd_step(init_state("sgd", 2), np.zeros(2), np.array([1.0, -1.0]), 0.1)
    np.testing.assert_allclose(w, [-0.1, 0.1])
    assert st_.t == 1


def test_momentum_first_step():
    s, w = momentum_step(init_state("momentum", 1), np.array([2.0]), np.array([1.0]), 0.1)
    np.testing.assert_allclose(s.buf, [-0.1])
    np.testing.assert_allclose(w, [1.9])


def test_momentum_second_step_by_hand():
    s, w = momentum_step(init_state("momentum", 1), np.array([0.0]), np.array([1.0]), 0.1)
    s, w = momentum_step(s, w, np.array([1.0]), 0.1)
    # m2 = 0.9 * -0.1 - 0.1 = -0.19; w2 = -0.1 - 0.19
    np.testing.assert_allclose(s.buf, [-0.19])
    np.testing.assert_allclose(w, [-0.29])


@pytest.mark.parametrize("variant", ["sgd", "momentum", "adam", "rmsprop"])
def test_zero_gradient_fixed_point(variant):
    s = init_state(variant, 3)
    w = np.array([1.0, -2.0, 3.0])
    for _ in range(5):
        s, w2 = step(s, w, np.zeros(3), 0.1)
        np.testing.assert_array_equal(w2, w)
    assert s.t == 5


def test_adam_first_step_sign():
    _, w = adam_step(init_state("adam", 2), np.zeros(2), np.array([1.0, 0.0]), 0.1)
    np.testing.assert_allclose(w, [-0.1, 0.0], rtol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100).filter(lambda x: abs(x) > 1e-3), min_size=1, max_size=5))
def test_adam_first_step_scale_invariant(g):
    g = np.array(g)
    _, w1 = adam_step(init_state("adam", g.size), np.zeros(g.size), g, 0.1)
    _, w10 = adam_step(init_state("adam", g.size), np.zeros(g.size), 10 * g, 0.1)
    np.testing.assert_allclose(w1, w10, rtol=1e-6)
    np.testing.assert_allclose(w1, -0.1 * np.sign(g), rtol=1e-5)


def test_rmsprop_first_step():
    # oracle: v' = 0.1 * 4 = 0.4; update = -0.1 * 2 / sqrt(0.4) = -0.31622776601683794
    s, w = rmsprop_step(init_state("rmsprop", 1), np.zeros(1), np.array([2.0]), 0.1)
    np.testing.assert_allclose(s.sq, [0.4])
    np.testing.assert_allclose(w, [-0.31622776601683794], rtol=1e-9)  # up to eps


def test_rmsprop_constant_gradient_limit():
    s, w = init_state("rmsprop", 1), np.zeros(1)
    for _ in range(300):
        prev = w
        s, w = rmsprop_step(s, w, np.array([-3.0]), 0.01)
    assert (w - prev)[0] == pytest.approx(0.01, rel=1e-9)


@pytest.mark.parametrize("variant", ["sgd", "momentum", "adam", "rmsprop"])
def test_non_finite_gradient_rejected(variant):
    with pytest.raises(NonFiniteGradient):
        step(init_state(variant, 2), np.zeros(2), np.array([1.0, np.nan]), 0.1)


def test_dimension_mismatch_and_unknown_hyper():
    with pytest.raises(ValueError):
        step(init_state("momentum", 2), np.zeros(3), np.zeros(3), 0.1)
    with pytest.raises(ValueError):
        init_state("adam", 2, mu=0.9)
    with pytest.raises(ValueError):
        init_state("lbfgs", 2)


# -- properties -----------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 1.9), min_size=1, max_size=6), st.integers(0, 1000))
def test_full_batch_sgd_monotone_on_quadratic(spectrum, seed):
    lr = 1.0
    model, data = make_quadratic_problem(spectrum, noise=1.0, N=6, seed=seed)
    b = MiniBatch.full(data)
    s, w = init_state("sgd", len(spectrum)), np.zeros(len(spectrum))
    losses = [model.loss(w, b)]
    for _ in range(50):
        s, w = sgd_step(s, w, model.gradient(w, b), lr)
        losses.append(model.loss(w, b))
    assert all(b2 <= a + 1e-15 * abs(a) for a, b2 in zip(losses, losses[1:]))


@pytest.mark.slow
@pytest.mark.parametrize("variant,lr", [("sgd", 2.0), ("momentum", 0.5), ("adam", 0.02), ("rmsprop", 0.3)])
def test_all_optimizers_reach_small_gradient_on_logistic(variant, lr):
    model, data = make_logistic_problem(3, 200, separation=1.0, seed=0)
    b = MiniBatch.full(data)
    s, w = init_state(variant, 4), np.zeros(4)
    for t in range(1, 40_001):
        g = model.gradient(w, b)
        if np.linalg.norm(g) < 1e-6:
            break
        # the sign-like steps of Adam/RMSProp need a decaying rate to settle
        rate = {"adam": lr / np.sqrt(t), "rmsprop": lr / t}.get(variant, lr)
        s, w = step(s, w, g, rate)
    assert np.linalg.norm(model.gradient(w, b)) < 1e-6
