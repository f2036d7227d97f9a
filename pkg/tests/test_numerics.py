import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustreg.loss import TUKEY_C, tukey_psi, tukey_rho
from robustreg.numerics import (DimensionError, NumericError, finite_diff_grad, gauss_sample, make_rng,
                                matmul)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def test_matmul_identity_and_scalar():
    assert np.array_equal(matmul([[1, 0], [0, 1]], [[3, 4], [5, 6]]), [[3, 4], [5, 6]])
    assert np.array_equal(matmul([[2]], [[3]]), [[6]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32))
def test_matmul_matches_triple_loop_exactly(m, k, n, seed):
    r = make_rng(seed)
    a, b = r.standard_normal((m, k)), r.standard_normal((k, n))
    assert np.array_equal(matmul(a, b), triple_loop(a, b))


def test_matmul_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        matmul(np.ones(3), np.ones((3, 1)))


def test_gauss_sample_zero_sigma_and_negative():
    assert not np.any(gauss_sample(make_rng(0), (4, 5), 0.0))
    with pytest.raises(ValueError):
        gauss_sample(make_rng(0), 3, -1.0)


def test_gauss_sample_std():
    x = gauss_sample(make_rng(7), 100_000, 0.01)
    assert 0.0098 <= x.std() <= 0.0102


def test_gauss_sample_deterministic():
    a = gauss_sample(make_rng(3), (10, 10), 1.0)
    b = gauss_sample(make_rng(3), (10, 10), 1.0)
    assert a.tobytes() == b.tobytes()


def test_make_rng_rejects_negative_seed():
    with pytest.raises(ValueError):
        make_rng(-1)


def test_fd_quadratic_and_constant():
    g = finite_diff_grad(lambda x: float(np.sum(x**2)), np.array([3.0]))
    assert abs(g[0] - 6.0) <= 1e-6
    assert not np.any(finite_diff_grad(lambda x: 4.2, np.ones(5)))


def test_fd_of_rho_matches_psi():
    x = make_rng(11).uniform(-TUKEY_C, TUKEY_C, 50)
    g = finite_diff_grad(lambda v: float(np.sum(tukey_rho(v))), x)
    psi = tukey_psi(x)
    assert np.all(np.abs(g - psi) <= 1e-6 * np.maximum(np.abs(psi), 1e-3))


def test_fd_raises_on_non_finite():
    with pytest.raises(NumericError):
        finite_diff_grad(lambda x: float("nan"), np.ones(2))
