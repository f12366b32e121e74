import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_opt.lanczos import extremal_eigs
from neumann_opt.linalg import RngStream, finite_diff_grad, finite_diff_hvp
from neumann_opt.models import (Dataset, EpochSampler, MiniBatch, dense_hessian, load_csv,
                                make_logistic_problem, make_mlp_problem, make_quadratic_problem,
                                sample_minibatch)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# -- datasets and batches -----------------------------------------------------

def test_dataset_validation():
    with pytest.raises(ValueError, match="empty"):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        Dataset([[1.0, np.nan]], [0])
    with pytest.raises(ValueError):
        Dataset([[1.0]], [2.0])
    ds = Dataset([[1.0, 2.0], [3.0, 4.0]], [0, 1])
    assert len(ds) == 2 and ds.feature_dim == 2
    with pytest.raises(ValueError):
        ds.features[0, 0] = 5.0  # read-only


def test_minibatch_nonempty():
    with pytest.raises(ValueError):
        MiniBatch([])


def test_full_batch_each_index_once():
    _, data = make_logistic_problem(3, 20)
    b = sample_minibatch(data, 20, RngStream(0))
    assert sorted(b.indices.tolist()) == list(range(20))


def test_singleton_batch_repeatable():
    _, data = make_logistic_problem(3, 20)
    a = sample_minibatch(data, 1, RngStream(5))
    b = sample_minibatch(data, 1, RngStream(5))
    assert a.indices.tolist() == b.indices.tolist() and a.size == 1


def test_batch_larger_than_dataset():
    _, data = make_logistic_problem(3, 5)
    with pytest.raises(ValueError):
        sample_minibatch(data, 6, RngStream(0))
    with pytest.raises(ValueError):
        EpochSampler(5, 6, RngStream(0))


def test_epoch_of_ten_by_three():
    # oracle: RngStream(7).permutation(10) = [8,0,7,1,3,6,2,4,5,9]; chunks of 3, short tail dropped
    s = EpochSampler(10, 3, RngStream(7))
    assert s.steps_per_epoch == 3
    assert [b.indices.tolist() for b in s.epoch_batches()] == [[8, 0, 7], [1, 3, 6], [2, 4, 5]]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 1000))
def test_epoch_coverage(N, B, seed):
    B = min(B, N)
    s = EpochSampler(N, B, RngStream(seed))
    for _ in range(2):
        batches = s.epoch_batches()
        assert all(b.size == B for b in batches)
        seen = np.concatenate([b.indices for b in batches])
        assert len(seen) == (N // B) * B
        assert len(set(seen.tolist())) == len(seen)
        if N % B == 0:
            assert sorted(seen.tolist()) == list(range(N))


def test_sampler_iterates_over_epochs():
    s = EpochSampler(6, 2, RngStream(1))
    first = [next(s).indices.tolist() for _ in range(3)]
    assert sorted(sum(first, [])) == list(range(6))
    assert s.epoch == 1
    next(s)
    assert s.epoch == 2


# -- quadratic ----------------------------------------------------------------

def test_quadratic_gradient_analytic():
    model, data = make_quadratic_problem([1.0, 0.1], w_star=[2.0, -1.0], noise=0.0, N=7)
    w = np.array([0.5, 0.5])
    np.testing.assert_allclose(model.gradient(w, MiniBatch.full(data)), [1.0 * -1.5, 0.1 * 1.5], rtol=1e-15)


def test_quadratic_minimizer():
    model, data = make_quadratic_problem([1.0, 0.1], w_star=[2.0, -1.0], N=5)
    b = MiniBatch([0, 3])
    np.testing.assert_array_equal(model.gradient(np.array([2.0, -1.0]), b), [0.0, 0.0])
    assert model.loss(np.array([2.0, -1.0]), b) == 0.0


@pytest.mark.parametrize("N", [1, 2, 7, 100])
def test_quadratic_noise_sums_to_zero_exactly(N):
    model, data = make_quadratic_problem([1.0, 0.1, 3.0], w_star=[0.0, 1.0, 2.0], noise=2.5, N=N, seed=4)
    # the noise sum is exactly zero, in any order
    assert np.all(data.features.sum(axis=0) == 0.0)
    assert np.all(data.features[::-1].sum(axis=0) == 0.0)
    w = np.array([1.0, -3.0, 0.25])
    exact = model.spectrum * (w - model.w_star)
    np.testing.assert_array_equal(model.gradient(w, MiniBatch.full(data)), exact)


def test_quadratic_minibatch_gradient_is_noisy():
    model, data = make_quadratic_problem([1.0, 0.1], w_star=[0.0, 0.0], noise=1.0, N=10)
    assert np.linalg.norm(model.gradient(np.zeros(2), MiniBatch([0]))) > 0


def test_quadratic_hvp_batch_independent():
    model, data = make_quadratic_problem([1.0, -0.5], noise=1.0, N=6)
    v = np.array([1.0, 2.0])
    for idx in ([0], [1, 2], list(range(6))):
        np.testing.assert_array_equal(model.hvp(np.zeros(2), MiniBatch(idx), v), [1.0, -1.0])


@pytest.mark.parametrize("N,B", [(4, 1), (5, 2), (6, 3), (8, 3), (7, 2)])
def test_unbiasedness_by_enumeration(N, B):
    model, data = make_quadratic_problem([2.0, 0.3, -0.1], noise=1.7, N=N, seed=N * 10 + B)
    w = np.array([0.3, -1.2, 0.8])
    grads = [model.gradient(w, MiniBatch(list(c))) for c in itertools.combinations(range(N), B)]
    mean = np.mean(grads, axis=0)
    full = model.gradient(w, MiniBatch.full(data))
    np.testing.assert_allclose(mean, full, atol=1e-12)


def test_loss_is_mean_of_per_sample_losses():
    for model, data in (make_quadratic_problem([1.0, 0.2], noise=1.0, N=9),
                        make_logistic_problem(4, 30, seed=1),
                        make_mlp_problem(2, 5, 30, seed=1)):
        w = model.init_params(RngStream(3), scale=0.5)
        b = MiniBatch([0, 4, 5, 8])
        per = [model.loss(w, MiniBatch([i])) for i in b.indices]
        assert abs(model.loss(w, b) - np.mean(per)) <= 1e-14 * max(1.0, abs(np.mean(per)))


# -- logistic -----------------------------------------------------------------

def test_logistic_zero_weights_ln2():
    model, data = make_logistic_problem(5, 40)
    assert model.loss(np.zeros(6), MiniBatch.full(data)) == pytest.approx(np.log(2.0), rel=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_logistic_gradient_and_hvp_vs_finite_differences(seed):
    model, data = make_logistic_problem(4, 50, separation=2.0, seed=seed % 7)
    rng = RngStream(seed)
    w = rng.standard_normal(5)
    v = rng.standard_normal(5)
    b = MiniBatch(rng.permutation(50)[:16])
    g_fd = finite_diff_grad(lambda x: model.loss(x, b), w)
    assert rel(model.gradient(w, b), g_fd) <= 1e-5
    h_fd = finite_diff_hvp(lambda x: model.gradient(x, b), w, v)
    assert rel(model.hvp(w, b, v), h_fd) <= 1e-5


def test_logistic_hessian_positive_definite():
    model, data = make_logistic_problem(4, 50)
    H = model.hessian(np.ones(5), MiniBatch.full(data))
    assert np.linalg.eigvalsh(H).min() >= model.l2 * (1 - 1e-9)


# -- MLP ----------------------------------------------------------------------

def test_mlp_zero_hidden_weights_matches_logistic_output_layer():
    model, data = make_mlp_problem(2, 4, 40, seed=2)
    w = np.zeros(model.param_count)
    w[-1] = 0.3  # output bias only; hidden activations are tanh(0) = 0
    b = MiniBatch.full(data)
    p = model.predict(w, data.features)
    np.testing.assert_allclose(p, 1 / (1 + np.exp(-0.3)), rtol=1e-14)
    g = model.gradient(w, b)
    # output bias gradient = mean(sigma(z) - y), as in logistic regression with no features
    assert g[-1] == pytest.approx(np.mean(p - data.targets), rel=1e-12)
    np.testing.assert_array_equal(g[:-1], 0.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_mlp_gradient_vs_finite_differences(seed):
    model, data = make_mlp_problem(3, 6, 40, seed=seed % 5)
    rng = RngStream(seed)
    w = model.init_params(rng, scale=0.8)
    b = MiniBatch(rng.permutation(40)[:10])
    g_fd = finite_diff_grad(lambda x: model.loss(x, b), w)
    assert rel(model.gradient(w, b), g_fd) <= 1e-4


def test_mlp_hessian_indefinite_at_init():
    model, data = make_mlp_problem(2, 8, 256, seed=0)
    w = model.init_params(RngStream(0))
    b = sample_minibatch(data, 64, RngStream(1))
    lam_min, lam_max = extremal_eigs(model, w, b, k=model.param_count, rng=RngStream(2))
    oracle = np.linalg.eigvalsh(dense_hessian(model, w, b))
    assert lam_min < 0
    assert oracle[0] < 0
    assert abs(lam_min - oracle[0]) <= 1e-5 * np.abs(oracle).max()


def test_mlp_hvp_symmetric():
    model, data = make_mlp_problem(2, 4, 30, seed=1)
    rng = RngStream(9)
    w = model.init_params(rng, scale=0.7)
    b = MiniBatch.full(data)
    u, v = rng.standard_normal(model.param_count), rng.standard_normal(model.param_count)
    lhs, rhs = model.hvp(w, b, u) @ v, u @ model.hvp(w, b, v)
    assert abs(lhs - rhs) <= 1e-5 * max(1.0, abs(lhs))


# -- CSV ----------------------------------------------------------------------

def test_load_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n1.0,2.0,0\n3.0,4.0,1\n")
    ds = load_csv(p)
    assert len(ds) == 2 and ds.feature_dim == 2 and ds.kind == "classification"


def test_load_csv_header_only(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n")
    with pytest.raises(ValueError, match="empty dataset"):
        load_csv(p)


def test_load_csv_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n1,2,0\n1,2\n")
    with pytest.raises(ValueError, match="row 3"):
        load_csv(p)


def test_load_csv_non_numeric_and_missing(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n1,x,0\n")
    with pytest.raises(ValueError, match="row 2"):
        load_csv(p)
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv")
