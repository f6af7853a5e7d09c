import numpy as np
import pytest
from hypothesis import given, strategies as st

from mimoest.errors import NotPositiveDefinite
from mimoest.numerics import (RngStream, cholesky, frobenius_norm_sq, herm, hpd_inverse,
                              sample_complex_gaussian)

from conftest import random_hpd


def test_inverse_identity():
    np.testing.assert_allclose(hpd_inverse(np.eye(3)), np.eye(3), atol=1e-15)


def test_inverse_diagonal():
    np.testing.assert_allclose(hpd_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_inverse_complex_2x2():
    a = np.array([[2, 1j], [-1j, 2]])
    expected = np.array([[2, -1j], [1j, 2]]) / 3
    inv = hpd_inverse(a)
    np.testing.assert_allclose(inv, expected, atol=1e-14)
    np.testing.assert_allclose(a @ inv, np.eye(2), atol=1e-14)


def test_inverse_rejects_non_hermitian():
    with pytest.raises(ValueError):
        hpd_inverse(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_inverse_raises_on_indefinite():
    with pytest.raises(NotPositiveDefinite):
        hpd_inverse(np.diag([1.0, -1.0]))


def test_jitter_rescues_semidefinite():
    # rank-one plus nothing: singular, rescued by the 1e-12 trace jitter
    v = np.array([[1.0], [1.0]])
    low = cholesky(v @ v.T)
    assert np.all(np.isfinite(low))


@given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_inverse_property(n, seed):
    a = random_hpd(np.random.default_rng(seed), n)
    inv = hpd_inverse(a)
    assert np.linalg.norm(a @ inv - np.eye(n)) < 1e-9 * n
    assert np.max(np.abs(inv - herm(inv))) <= 1e-10 * np.max(np.abs(inv))


@given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_cholesky_reconstructs(n, seed):
    a = random_hpd(np.random.default_rng(seed), n)
    low = cholesky(a)
    assert np.linalg.norm(low @ herm(low) - a) < 1e-10 * np.linalg.norm(a)


def test_batched_inverse(gen):
    a = random_hpd(gen, 4, (3, 2))
    inv = hpd_inverse(a)
    np.testing.assert_allclose(a @ inv, np.broadcast_to(np.eye(4), a.shape), atol=1e-10)


def test_sampler_zero_variance():
    z = sample_complex_gaussian(RngStream(1), 3, 4, variance=0.0)
    assert z.shape == (3, 4) and np.all(z == 0)


def test_sampler_unit_moment():
    z = sample_complex_gaussian(RngStream(7, "moment"), 1000, 1000)
    assert 0.995 <= np.mean(np.abs(z) ** 2) <= 1.005
    # real and imaginary parts each carry half the variance
    assert abs(np.var(z.real) - 0.5) < 0.005 and abs(np.var(z.imag) - 0.5) < 0.005


def test_sampler_determinism_and_independence():
    a = sample_complex_gaussian(RngStream(3, "x", 1, 2), 4, 4)
    b = sample_complex_gaussian(RngStream(3, "x", 1, 2), 4, 4)
    c = sample_complex_gaussian(RngStream(3, "x", 1, 3), 4, 4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sampler_diagonal_covariance():
    var = np.array([0.5, 1.0, 2.0, 4.0])
    z = sample_complex_gaussian(RngStream(11), shape=(100_000, 4), variance=var)
    cov = (herm(z) @ z / z.shape[0]).real
    np.testing.assert_allclose(np.diag(cov), var, rtol=0.03)


def test_sampler_rejects_negative_variance():
    with pytest.raises(ValueError):
        sample_complex_gaussian(RngStream(0), 2, 2, variance=-1.0)


def test_frobenius():
    assert frobenius_norm_sq(np.zeros((2, 3))) == 0.0
    assert frobenius_norm_sq(np.array([[3.0, 4.0]])) == 25.0
    assert frobenius_norm_sq(np.array([[1j], [1.0]])) == 2.0
